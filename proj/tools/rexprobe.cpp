// rexprobe command-line entry point.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "rexprobe/commands.hpp"

namespace {

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("rexprobe");
  logger->set_pattern("%^%l%$: %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("REXPROBE_LOG")) spdlog::set_level(spdlog::level::from_str(level));
}

void log_to_spdlog(rexprobe::LogLevel level, const std::string& msg) {
  switch (level) {
    case rexprobe::LogLevel::kDebug:
      spdlog::debug(msg);
      break;
    case rexprobe::LogLevel::kInfo:
      spdlog::info(msg);
      break;
    case rexprobe::LogLevel::kWarn:
      spdlog::warn(msg);
      break;
    case rexprobe::LogLevel::kError:
      spdlog::error(msg);
      break;
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  rexprobe::RunConfig c;
  CLI::App app{"Probe document-level relation extraction models with attributions and attacks"};
  app.require_subcommand(1);

  auto global = [&](CLI::App* sub) {
    sub->add_option("--corpus", c.corpus, "DocRED-schema corpus JSON");
    sub->add_option("--overlay", c.overlay, "evidence overlay JSON");
    sub->add_option("--adapter", c.adapter, "builtin:refmodel | exec:<cmd> | tcp:<host:port>");
    sub->add_option("--params", c.params, "reference model parameters");
    sub->add_option("--seed", c.seed, "random seed");
    sub->add_option("--out", c.out, "output directory");
    sub->add_flag("--force", c.force, "overwrite existing outputs");
    sub->add_option("--jobs", c.jobs, "parallel adapter connections")->check(CLI::PositiveNumber);
    sub->add_option("--timeout-ms", c.timeout_ms, "per-request adapter timeout")->check(CLI::PositiveNumber);
  };

  auto* validate = app.add_subcommand("validate", "check corpus invariants");
  global(validate);

  auto* train = app.add_subcommand("train-ref", "train the reference model");
  global(train);
  train->add_option("--epochs", c.epochs)->check(CLI::NonNegativeNumber);
  train->add_option("--lr", c.lr);
  train->add_option("--negative-ratio", c.negative_ratio);
  train->add_option("--dim", c.dim)->check(CLI::PositiveNumber);
  train->add_option("--tau", c.tau)->check(CLI::Range(0.0, 1.0));

  auto* attack = app.add_subcommand("attack", "write perturbed documents");
  global(attack);
  attack->add_option("--kind", c.kind, "mask_evidence|asa|ssa|entity_mask|entity_shuffle|entity_ood")->required();
  attack->add_option("--lexicon", c.lexicon, "antonym/synonym lexicon TSV");
  attack->add_option("--pool", c.pool, "OOD name pool TSV");
  attack->add_option("--training-names", c.training_names, "names that must not appear in the pool");
  attack->add_option("--mask-token", c.mask_token);
  attack->add_flag("--joint", c.joint, "mask all evidence of a document at once");

  auto* evaluate = app.add_subcommand("evaluate", "F1 and flip rates for a perturbed set");
  global(evaluate);
  evaluate->add_option("--perturbed", c.perturbed, "perturbed.jsonl from attack")->required();
  evaluate->add_option("--before", c.before, "precomputed predictions on the original documents");
  evaluate->add_option("--after", c.after, "precomputed predictions on the perturbed documents");

  auto* attribute = app.add_subcommand("attribute", "integrated-gradients word attributions");
  global(attribute);
  attribute->add_option("--steps", c.steps)->check(CLI::PositiveNumber);
  attribute->add_flag("--resume", c.resume, "append to an existing attributions.jsonl");

  auto* map = app.add_subcommand("map", "MAP curve against gold word evidence");
  global(map);
  map->add_option("--attributions", c.attributions)->required();
  map->add_option("--k-max", c.k_max)->check(CLI::PositiveNumber);
  map->add_flag("--svg", c.svg, "also draw map_curve.svg");

  auto* probe = app.add_subcommand("probe", "F1 on top-K template inputs");
  global(probe);
  probe->add_option("--attributions", c.attributions)->required();
  probe->add_option("--k", c.k_list, "K values")->delimiter(',');

  auto* profile = app.add_subcommand("profile", "positional profile and top-K word statistics");
  global(profile);
  profile->add_option("--attributions", c.attributions)->required();
  profile->add_option("--k", c.k)->check(CLI::PositiveNumber);
  profile->add_option("--max-len", c.max_len)->check(CLI::PositiveNumber);
  profile->add_flag("--absolute", c.absolute, "profile |score| instead of signed score");

  auto* serve = app.add_subcommand("serve-ref", "serve the reference model over the wire protocol");
  serve->add_option("--params", c.params)->required();
  serve->add_option("--tcp", c.tcp, "listen on host:port instead of stdio");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? rexprobe::exit_code::kOk : rexprobe::exit_code::kEnvironment;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "validate") return rexprobe::cmd_validate(c, log_to_spdlog);
    if (name == "train-ref") return rexprobe::cmd_train_ref(c, log_to_spdlog);
    if (name == "attack") return rexprobe::cmd_attack(c, log_to_spdlog);
    if (name == "evaluate") return rexprobe::cmd_evaluate(c, log_to_spdlog);
    if (name == "attribute") return rexprobe::cmd_attribute(c, log_to_spdlog);
    if (name == "map") return rexprobe::cmd_map(c, log_to_spdlog);
    if (name == "probe") return rexprobe::cmd_probe(c, log_to_spdlog);
    if (name == "profile") return rexprobe::cmd_profile(c, log_to_spdlog);
    if (name == "serve-ref") return rexprobe::cmd_serve_ref(c, log_to_spdlog);
  } catch (const std::exception& e) {
    // Findings are reported through return values; anything thrown is a
    // usage, input or environment problem.
    spdlog::error(e.what());
    return rexprobe::exit_code::kEnvironment;
  }
  return rexprobe::exit_code::kEnvironment;
}
