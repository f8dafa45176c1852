#pragma once

// End-to-end pipeline operations behind the CLI subcommands. Kept in the
// library so the binary stays a thin argument-parsing shell and the tests
// can drive the exact code paths the CLI runs.

#include <filesystem>
#include <regex>
#include <sstream>
#include <thread>

#include "mahnet/config.hpp"
#include "mahnet/image.hpp"
#include "mahnet/nifti.hpp"

namespace mahnet {

// ---- preprocess: paired volumes -> ULSB bundle ----

struct PreprocessOptions {
  std::string pattern = "^([^_]+)_";
  int resize = 0;  // 0 keeps native slice dims
};

struct PreprocessSummary {
  int volumes = 0;
  int slices = 0;
  int patients = 0;
  std::vector<std::string> unmatched;
  std::vector<std::string> errors;  // "path: message" per failed volume
};

namespace detail {

inline std::vector<std::string> list_nifti(const std::string& dir) {
  std::vector<std::string> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".nii") out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

inline Mask2D label_slice(const VolumeRecord& vol, int z) {
  Mask2D m(vol.ny, vol.nx);
  for (int y = 0; y < vol.ny; ++y)
    for (int x = 0; x < vol.nx; ++x) m.at(y, x) = vol.at(x, y, z) > 0.5f ? 1 : 0;
  return m;
}

inline Mask2D resize_mask_nearest(const Mask2D& m, int size) {
  Mask2D out(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      int sr = std::min(m.h - 1, static_cast<int>((r + 0.5) * m.h / size));
      int sc = std::min(m.w - 1, static_cast<int>((c + 0.5) * m.w / size));
      out.at(r, c) = m.at(sr, sc);
    }
  return out;
}

}  // namespace detail

// Reads paired image/label volumes from <in_dir>/images and <in_dir>/labels,
// slices them and writes one bundle. Volumes that fail to parse are reported
// in the summary and skipped; the rest are still processed.
inline PreprocessSummary preprocess_volumes(const std::string& in_dir,
                                            const std::string& out_bundle,
                                            const PreprocessOptions& opt = {}) {
  auto images = detail::list_nifti(in_dir + "/images");
  auto labels = detail::list_nifti(in_dir + "/labels");
  if (images.empty()) throw std::runtime_error("preprocess: no volumes found in " + in_dir);

  PairingResult paired = pair_by_identifier(images, labels, opt.pattern);
  PreprocessSummary sum;
  for (const auto& p : paired.unmatched_images) sum.unmatched.push_back(p);
  for (const auto& p : paired.unmatched_labels) sum.unmatched.push_back(p);

  std::regex re(opt.pattern);
  auto ident = [&](const std::string& path) {
    size_t slash = path.find_last_of('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    std::smatch m;
    std::regex_search(base, m, re);
    return m[1].str();
  };

  std::vector<SliceRecord> records;
  for (const auto& [img_path, lbl_path] : paired.pairs) {
    const std::string id = ident(img_path);
    try {
      VolumeRecord iv = read_volume(img_path);
      VolumeRecord lv = read_volume(lbl_path);
      if (iv.nx != lv.nx || iv.ny != lv.ny || iv.nz != lv.nz)
        throw std::runtime_error("image/label volume dims differ");
      std::vector<Image8> slices = extract_slices(iv);
      for (int z = 0; z < iv.nz; ++z) {
        SliceRecord rec;
        rec.image = slices[static_cast<size_t>(z)];
        rec.label = detail::label_slice(lv, z);
        if (opt.resize > 0) {
          rec.image = resize_lanczos(rec.image, opt.resize, opt.resize);
          rec.label = detail::resize_mask_nearest(rec.label, opt.resize);
        }
        rec.case_id = id + "_z" + std::to_string(z);
        rec.patient_id = id;
        rec.slice_index = static_cast<uint32_t>(z);
        records.push_back(std::move(rec));
      }
      ++sum.volumes;
    } catch (const std::exception& e) {
      sum.errors.push_back(img_path + ": " + e.what());
    }
  }
  if (records.empty()) throw std::runtime_error("preprocess: no usable volumes in " + in_dir);

  DatasetBundle bundle = make_bundle(std::move(records));
  write_bundle(bundle, out_bundle);
  sum.slices = static_cast<int>(bundle.records.size());
  sum.patients = static_cast<int>(bundle.index.size());
  return sum;
}

// ---- train / eval / predict ----

struct RunPaths {
  std::string bundle;
  std::string checkpoint;
  std::string report;
};

inline RunPaths run_paths_from_json(const Json& j, const std::string& where) {
  detail::require_keys(j, where, {"bundle", "checkpoint", "report"});
  RunPaths p;
  p.bundle = detail::get_or(j, "bundle", std::string());
  p.checkpoint = detail::get_or(j, "checkpoint", std::string());
  p.report = detail::get_or(j, "report", std::string());
  return p;
}

inline TrainingReport cmd_train(const Json& cfg) {
  detail::require_keys(cfg, "config", {"spec", "loss", "train", "data"});
  NetworkSpec spec = spec_from_json(cfg.value("spec", Json::object()));
  LossWeights weights = loss_from_json(cfg.value("loss", Json::object()));
  TrainConfig tc = train_from_json(cfg.value("train", Json::object()));
  RunPaths paths = run_paths_from_json(cfg.value("data", Json::object()), "data");
  if (paths.bundle.empty()) throw std::invalid_argument("config: data.bundle is required");

  DatasetBundle data = read_bundle(paths.bundle);
  Network net = build_network(spec, tc.seed);
  TrainingReport rep = train(net, weights, data, tc);
  if (!paths.checkpoint.empty()) save_checkpoint(net.state(), paths.checkpoint);
  if (!paths.report.empty()) {
    std::ofstream os(paths.report);
    os << training_report_to_json(rep).dump(2) << "\n";
  }
  return rep;
}

inline MetricsReport cmd_eval(const Json& cfg) {
  detail::require_keys(cfg, "config", {"spec", "eval"});
  NetworkSpec spec = spec_from_json(cfg.value("spec", Json::object()));
  const Json& ej = cfg.value("eval", Json::object());
  detail::require_keys(ej, "eval", {"bundle", "checkpoint", "report", "seed", "oracle"});
  std::string bundle_path = detail::get_or(ej, "bundle", std::string());
  if (bundle_path.empty()) throw std::invalid_argument("config: eval.bundle is required");
  bool oracle = detail::get_or(ej, "oracle", false);

  Network net = build_network(spec, detail::get_or(ej, "seed", uint64_t{0}));
  std::string ckpt = detail::get_or(ej, "checkpoint", std::string());
  if (!ckpt.empty()) net.load_state(load_checkpoint(ckpt));

  MetricsReport rep = evaluate(net, read_bundle(bundle_path), oracle);
  std::string report_path = detail::get_or(ej, "report", std::string());
  if (!report_path.empty()) {
    std::ofstream os(report_path);
    os << metrics_report_to_json(rep).dump(2) << "\n";
  }
  return rep;
}

// Blends the predicted mask over the input for a quick visual check:
// background keeps half intensity, lesion pixels are pushed toward white.
inline Image8 overlay_mask(const Image8& img, const Mask2D& mask) {
  Image8 out(img.h, img.w);
  for (size_t i = 0; i < img.v.size(); ++i)
    out.v[i] = mask.v[i] ? static_cast<uint8_t>(128 + img.v[i] / 2)
                         : static_cast<uint8_t>(img.v[i] / 2);
  return out;
}

inline void cmd_predict(const Json& cfg, const std::string& image_path,
                        const std::string& out_prefix) {
  detail::require_keys(cfg, "config", {"spec", "eval"});
  NetworkSpec spec = spec_from_json(cfg.value("spec", Json::object()));
  const Json& ej = cfg.value("eval", Json::object());
  detail::require_keys(ej, "eval", {"bundle", "checkpoint", "report", "seed", "oracle"});

  Network net = build_network(spec, detail::get_or(ej, "seed", uint64_t{0}));
  std::string ckpt = detail::get_or(ej, "checkpoint", std::string());
  if (!ckpt.empty()) net.load_state(load_checkpoint(ckpt));

  Image8 img = read_png(image_path);
  ForwardOut out = forward(net, image_to_tensor(img), false);
  Mask2D mask = seg_to_mask(out.seg);

  Image8 mask_img(mask.h, mask.w);
  for (size_t i = 0; i < mask.v.size(); ++i) mask_img.v[i] = mask.v[i] ? 255 : 0;
  write_png(out_prefix + "_mask.png", mask_img);
  write_png(out_prefix + "_overlay.png", overlay_mask(img, mask));
}

// ---- bench ----

struct BenchRow {
  std::string name;
  double mean_epoch_seconds = 0.0;
  double std_epoch_seconds = 0.0;
};

struct BenchReport {
  std::string machine;
  std::vector<BenchRow> rows;
};

inline BenchReport cmd_bench(const Json& cfg) {
  detail::require_keys(cfg, "config", {"bench"});
  const Json& bj = cfg.value("bench", Json::object());
  detail::require_keys(bj, "bench", {"variants", "epochs", "repeats", "seed", "cases", "size"});
  int epochs = detail::get_or(bj, "epochs", 1);
  int repeats = detail::get_or(bj, "repeats", 3);
  uint64_t seed = detail::get_or(bj, "seed", uint64_t{0});
  int cases = detail::get_or(bj, "cases", 4);
  int size = detail::get_or(bj, "size", 32);
  if (!bj.contains("variants") || !bj.at("variants").is_array() || bj.at("variants").empty())
    throw std::invalid_argument("config: bench.variants must list at least one variant");

  DatasetBundle data = synth_dataset(seed, cases, size);
  BenchReport rep;
  std::ostringstream machine;
  machine << "threads=" << std::thread::hardware_concurrency() << " build=" << __VERSION__;
  rep.machine = machine.str();

  for (const Json& vj : bj.at("variants")) {
    detail::require_keys(vj, "variant", {"name", "spec"});
    BenchRow row;
    row.name = vj.value("name", "variant");
    NetworkSpec spec = spec_from_json(vj.value("spec", Json::object()));
    spec.input_h = spec.input_w = size;
    std::vector<double> per_epoch;
    for (int r = 0; r < repeats; ++r) {
      Network net = build_network(spec, seed);
      TrainConfig tc;
      tc.epochs = epochs;
      tc.seed = seed;
      TrainingReport tr = train(net, LossWeights{}, data, tc);
      for (double s : tr.seconds) per_epoch.push_back(s);
    }
    double mean = 0.0;
    for (double s : per_epoch) mean += s;
    mean /= static_cast<double>(per_epoch.size());
    double var = 0.0;
    for (double s : per_epoch) var += (s - mean) * (s - mean);
    var /= static_cast<double>(per_epoch.size());
    row.mean_epoch_seconds = mean;
    row.std_epoch_seconds = std::sqrt(var);
    rep.rows.push_back(row);
  }
  return rep;
}

inline std::string bench_table(const BenchReport& rep) {
  std::ostringstream os;
  os << "# " << rep.machine << "\n";
  os << "variant\tepoch_seconds_mean\tepoch_seconds_std\n";
  for (const auto& r : rep.rows)
    os << r.name << "\t" << r.mean_epoch_seconds << "\t" << r.std_epoch_seconds << "\n";
  return os.str();
}

}  // namespace mahnet
