// Command-line entry point. Precedence: built-in defaults < --config TOML file < flags.
#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "commands.hpp"
#include "dgve/config.hpp"
#include "dgve/errors.hpp"

namespace {

std::string flag_name(const std::string& key) {
  std::string s = key;
  for (auto& ch : s)
    if (ch == '_' || ch == '.') ch = '-';
  return "--" + s;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace dgve;
  CLI::App app{"Degradation-guided enhancement of endoscopic images and video", "dgve"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_file;
  app.add_option("--config", config_file, "TOML config file; flags override its values")->check(CLI::ExistingFile);

  // One flag per config field.
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  const RunConfig defaults;
  for (const auto& f : config_fields()) {
    auto* o = app.add_option(flag_name(f.key), values[f.key], f.help + " [default: " + f.get(defaults) + "]");
    o->group("Config");
    options[f.key] = o;
  }

  for (const auto& c : cli::commands()) app.add_subcommand(c.name, c.help);

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const cli::Command* chosen = nullptr;
  for (const auto& c : cli::commands())
    if (app.got_subcommand(c.name)) chosen = &c;
  if (!chosen) {
    std::cerr << "a subcommand is required\n" << app.help();
    return 2;
  }

  RunConfig cfg;
  try {
    if (!config_file.empty()) cfg = load_config_file(config_file);
    for (const auto& f : config_fields())
      if (options[f.key]->count() > 0) set_field(cfg, f.key, values[f.key]);
    cfg.validate();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    chosen->run(cfg);
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
