// mahnet: command-line front end for the segmentation pipeline.
//
// Subcommands: preprocess, train, eval, predict, bench, serve. Every
// subcommand exits 0 on success and prints a single-line error to stderr
// on failure. The JSON config file is the source of truth for model and
// training settings; flags only pick the subcommand, paths and ports.

#include <iostream>

#include "CLI11.hpp"

#include "mahnet/service.hpp"

using namespace mahnet;

namespace {

int run_preprocess(const std::string& in_dir, const std::string& out_bundle, int resize) {
  PreprocessOptions opt;
  opt.resize = resize;
  PreprocessSummary sum = preprocess_volumes(in_dir, out_bundle, opt);
  std::cout << "volumes=" << sum.volumes << " slices=" << sum.slices
            << " patients=" << sum.patients << " unmatched=" << sum.unmatched.size() << "\n";
  for (const auto& u : sum.unmatched) std::cout << "unmatched: " << u << "\n";
  for (const auto& e : sum.errors) std::cerr << "error: " << e << "\n";
  return sum.errors.empty() ? 0 : 1;
}

int run_train(const std::string& config_path) {
  TrainingReport rep = cmd_train(load_json_file(config_path));
  for (size_t i = 0; i < rep.losses.size(); ++i)
    std::cout << "epoch=" << rep.epochs[i] + 1 << " mean_loss=" << rep.losses[i]
              << " seconds=" << rep.seconds[i] << "\n";
  return 0;
}

int run_eval(const std::string& config_path) {
  MetricsReport rep = cmd_eval(load_json_file(config_path));
  std::cout << metrics_report_to_json(rep).dump(2) << "\n";
  return 0;
}

int run_predict(const std::string& config_path, const std::string& image,
                const std::string& out_prefix) {
  cmd_predict(load_json_file(config_path), image, out_prefix);
  std::cout << "wrote " << out_prefix << "_mask.png and " << out_prefix << "_overlay.png\n";
  return 0;
}

int run_bench(const std::string& config_path) {
  BenchReport rep = cmd_bench(load_json_file(config_path));
  std::cout << bench_table(rep);
  return 0;
}

int run_serve(const std::string& config_path, int port) {
  Json cfg = load_json_file(config_path);
  detail::require_keys(cfg, "config", {"spec", "serve"});
  ServiceConfig sc;
  sc.spec = spec_from_json(cfg.value("spec", Json::object()));
  const Json& sj = cfg.value("serve", Json::object());
  detail::require_keys(sj, "serve", {"checkpoint", "seed", "max_body_bytes"});
  sc.checkpoint = detail::get_or(sj, "checkpoint", std::string());
  sc.seed = detail::get_or(sj, "seed", uint64_t{0});
  sc.max_body_bytes = detail::get_or(sj, "max_body_bytes", sc.max_body_bytes);

  SegmentationService service(sc);
  httplib::Server srv;
  service.attach(srv);
  std::cout << "listening on port " << port << "\n";
  if (!srv.listen("0.0.0.0", port)) {
    std::cerr << "error: cannot bind port " << port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mahnet: lesion segmentation pipeline"};
  app.require_subcommand(1);

  std::string in_dir, out_bundle, config, image, out_prefix;
  int resize = 0, port = 8080;

  auto* pre = app.add_subcommand("preprocess", "convert paired volumes to a slice bundle");
  pre->add_option("in_dir", in_dir, "directory with images/ and labels/ volumes")->required();
  pre->add_option("out_bundle", out_bundle, "output bundle path")->required();
  pre->add_option("--resize", resize, "resample slices to this square size");

  auto* tr = app.add_subcommand("train", "train a model from a JSON config");
  tr->add_option("--config", config, "JSON config path")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a bundle");
  ev->add_option("--config", config, "JSON config path")->required();

  auto* pr = app.add_subcommand("predict", "segment one PNG image");
  pr->add_option("--config", config, "JSON config path")->required();
  pr->add_option("--image", image, "input PNG")->required();
  pr->add_option("--out", out_prefix, "output path prefix")->required();

  auto* be = app.add_subcommand("bench", "time training epochs per model variant");
  be->add_option("--config", config, "JSON config path")->required();

  auto* se = app.add_subcommand("serve", "run the HTTP inference service");
  se->add_option("--config", config, "JSON config path")->required();
  se->add_option("--port", port, "TCP port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) return run_preprocess(in_dir, out_bundle, resize);
    if (tr->parsed()) return run_train(config);
    if (ev->parsed()) return run_eval(config);
    if (pr->parsed()) return run_predict(config, image, out_prefix);
    if (be->parsed()) return run_bench(config);
    if (se->parsed()) return run_serve(config, port);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}
