#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "getcap/commands.hpp"
#include "getcap/errors.hpp"

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> beam;
  std::string split;
  std::vector<std::string> images;
  std::string image;
};

getcap::RunConfig resolve(const Options& o) {
  getcap::RunConfig cfg = o.config.empty() ? getcap::default_run_config() : getcap::load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.beam) cfg.eval_beam = *o.beam;
  return cfg;
}

void add_common(CLI::App* cmd, Options& o, bool needs_checkpoint) {
  cmd->add_option("--config", o.config, "Run configuration file (key = value)");
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Override the configured seed");
  cmd->add_option("--beam", o.beam, "Override the configured decoding beam width");
  if (needs_checkpoint) cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer image captioning with a global image vector"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Cross-entropy training from scratch");
  add_common(train, o, false);
  auto* finetune = app.add_subcommand("finetune", "Self-critical fine-tuning with the CIDEr-D reward");
  add_common(finetune, o, true);
  auto* caption = app.add_subcommand("caption", "Caption images with beam search");
  add_common(caption, o, true);
  caption->add_option("images", o.images, "Image ids (default: every image of eval.split)");
  auto* eval = app.add_subcommand("eval", "Mean CIDEr-D over a split");
  add_common(eval, o, true);
  eval->add_option("--split", o.split, "train or val (default: eval.split)");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check of tiny models");
  add_common(gradcheck, o, false);
  auto* attribute = app.add_subcommand("attribute", "Integrated-gradients region attribution per word");
  add_common(attribute, o, true);
  attribute->add_option("--image", o.image, "Image id")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const getcap::RunConfig cfg = resolve(o);
    if (train->parsed()) {
      getcap::cmd_train(cfg, o.out, std::cout);
    } else if (finetune->parsed()) {
      getcap::cmd_finetune(cfg, o.checkpoint, o.out, std::cout);
    } else if (caption->parsed()) {
      getcap::cmd_caption(cfg, o.checkpoint, o.images, o.out, std::cout);
    } else if (eval->parsed()) {
      getcap::cmd_eval(cfg, o.checkpoint, o.split.empty() ? cfg.eval_split : o.split, o.out, std::cout);
    } else if (gradcheck->parsed()) {
      return getcap::cmd_gradcheck(cfg, o.out, std::cout).passed ? 0 : 1;
    } else if (attribute->parsed()) {
      getcap::cmd_attribute(cfg, o.checkpoint, o.image, o.out, std::cout);
    }
  } catch (const getcap::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
