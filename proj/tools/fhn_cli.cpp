#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "fhn/experiments.hpp"

namespace {

const std::map<std::string, std::string> kGlobalFlags{
    {"seed", "--seed"}, {"workers", "--workers"}, {"out_dir", "--out-dir,--out_dir"}, {"tolerance", "--tolerance"}};

std::string flag_names(const std::string& key) {
  std::string names = "--" + key;
  if (key.find('_') != std::string::npos) {
    std::string dashed = key;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    names += ",--" + dashed;
  }
  return names;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace fhn;
  CLI::App app{"FitzHugh-Nagumo SPDE toolkit: renormalisation constants, kernel checks, simulations"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::map<std::string, std::string> overrides;
  app.add_option("--config", config_path, "flat 'key = value' configuration file");
  for (const auto& [key, names] : kGlobalFlags)
    app.add_option_function<std::string>(names, [&overrides, key](const std::string& v) { overrides[key] = v; },
                                         "overrides config key '" + key + "'");

  std::map<std::string, config::Schema> schemas;
  for (const auto& cmd : exp::commands()) {
    auto* sub = app.add_subcommand(cmd, "run the " + cmd + " experiment");
    schemas[cmd] = exp::schema_for(cmd);
    for (const auto& spec : schemas[cmd]) {
      if (kGlobalFlags.count(spec.key)) continue;
      const std::string help = spec.help + (spec.fallback ? " [default: " + *spec.fallback + "]" : " [required]");
      sub->add_option_function<std::string>(
          flag_names(spec.key), [&overrides, key = spec.key](const std::string& v) { overrides[key] = v; }, help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exp::kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  config::Resolved resolved;
  try {
    const auto file = config_path.empty() ? std::map<std::string, std::string>{} : config::parse_file(config_path);
    resolved = config::resolve(schemas.at(command), file, overrides);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exp::kUsage;
  }

  exp::CommandResult res;
  try {
    res = exp::run_command(command, resolved);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exp::kNumerical;
  }
  if (res.metrics.contains("error")) std::cerr << "error: " << res.metrics["error"].get<std::string>() << "\n";
  std::cout << command << ": " << res.pass_fail << " (exit " << res.exit_code << ", config_hash " << resolved.hash()
            << ") -> " << resolved.str("out_dir") << "\n";
  return res.exit_code;
}
