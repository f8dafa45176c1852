#pragma once

// Strict JSON configuration parsing for the CLI and the service, plus the
// JSON serializers for training and metrics reports. Unknown keys are
// rejected everywhere so typos fail loudly instead of silently defaulting.

#include <fstream>
#include <set>

#include "json.hpp"

#include "mahnet/network.hpp"

namespace mahnet {

using Json = nlohmann::json;

namespace detail {

inline void require_keys(const Json& obj, const std::string& where,
                         const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key))
      throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

template <class V>
V get_or(const Json& obj, const std::string& key, V fallback) {
  auto it = obj.find(key);
  return it == obj.end() ? fallback : it->get<V>();
}

}  // namespace detail

inline NetworkSpec spec_from_json(const Json& j) {
  detail::require_keys(j, "spec",
                       {"depth", "base_filters", "num_classes", "use_mamba", "mamba_mode",
                        "use_reconstruction", "recon_bins", "input_h", "input_w",
                        "strict_input_range", "state_dim", "directions", "expansion"});
  NetworkSpec s;
  s.depth = detail::get_or(j, "depth", s.depth);
  s.base_filters = detail::get_or(j, "base_filters", s.base_filters);
  s.num_classes = detail::get_or(j, "num_classes", s.num_classes);
  s.use_mamba = detail::get_or(j, "use_mamba", s.use_mamba);
  if (j.contains("mamba_mode")) s.mamba_mode = ssm_mode_from_string(j.at("mamba_mode"));
  s.use_reconstruction = detail::get_or(j, "use_reconstruction", s.use_reconstruction);
  s.recon_bins = detail::get_or(j, "recon_bins", s.recon_bins);
  s.input_h = detail::get_or(j, "input_h", s.input_h);
  s.input_w = detail::get_or(j, "input_w", s.input_w);
  s.strict_input_range = detail::get_or(j, "strict_input_range", s.strict_input_range);
  s.state_dim = detail::get_or(j, "state_dim", s.state_dim);
  s.directions = detail::get_or(j, "directions", s.directions);
  s.expansion = detail::get_or(j, "expansion", s.expansion);
  s.validate();
  return s;
}

inline Json spec_to_json(const NetworkSpec& s) {
  return Json{{"depth", s.depth},
              {"base_filters", s.base_filters},
              {"num_classes", s.num_classes},
              {"use_mamba", s.use_mamba},
              {"mamba_mode", s.mamba_mode == SSMMode::kLti ? "lti" : "selective"},
              {"use_reconstruction", s.use_reconstruction},
              {"recon_bins", s.recon_bins},
              {"input_h", s.input_h},
              {"input_w", s.input_w},
              {"strict_input_range", s.strict_input_range},
              {"state_dim", s.state_dim},
              {"directions", s.directions},
              {"expansion", s.expansion}};
}

inline LossWeights loss_from_json(const Json& j) {
  detail::require_keys(j, "loss", {"alpha_recon", "seg_loss"});
  LossWeights w;
  w.alpha_recon = detail::get_or(j, "alpha_recon", w.alpha_recon);
  if (j.contains("seg_loss")) w.seg_loss = seg_loss_from_string(j.at("seg_loss"));
  w.validate();
  return w;
}

inline TrainConfig train_from_json(const Json& j) {
  detail::require_keys(j, "train",
                       {"epochs", "lr", "seed", "checkpoint_dir", "batch_size", "resume_from",
                        "stop_at_loss"});
  TrainConfig c;
  c.epochs = detail::get_or(j, "epochs", c.epochs);
  c.lr = detail::get_or(j, "lr", c.lr);
  c.seed = detail::get_or(j, "seed", c.seed);
  c.checkpoint_dir = detail::get_or(j, "checkpoint_dir", c.checkpoint_dir);
  c.batch_size = detail::get_or(j, "batch_size", c.batch_size);
  c.resume_from = detail::get_or(j, "resume_from", c.resume_from);
  c.stop_at_loss = detail::get_or(j, "stop_at_loss", c.stop_at_loss);
  return c;
}

inline Json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  return Json::parse(is);
}

inline Json training_report_to_json(const TrainingReport& r) {
  return Json{{"epochs", r.epochs},
              {"mean_loss", r.losses},
              {"seconds", r.seconds},
              {"checkpoints", r.checkpoints}};
}

// Column order is fixed: DSC RAVD ASD MHD AUC IoU. Undefined entries are null.
inline Json metrics_report_to_json(const MetricsReport& r) {
  const std::vector<std::string> cols = {"DSC", "RAVD", "ASD", "MHD", "AUC", "IoU"};
  Json cases = Json::array();
  for (const auto& c : r.cases) {
    const std::optional<double>* vals[] = {&c.dsc, &c.ravd, &c.asd, &c.mhd, &c.auc, &c.iou};
    Json row = Json::array();
    for (const auto* v : vals)
      row.push_back(*v ? Json(**v) : Json(nullptr));
    cases.push_back(Json{{"case_id", c.case_id}, {"values", row}});
  }
  Json mean = Json::array(), stddev = Json::array(), defined = Json::array();
  for (const auto& name : cols) {
    bool has = r.mean.count(name) > 0;
    mean.push_back(has ? Json(r.mean.at(name)) : Json(nullptr));
    stddev.push_back(has ? Json(r.stddev.at(name)) : Json(nullptr));
    defined.push_back(r.defined.count(name) ? r.defined.at(name) : 0);
  }
  return Json{{"columns", cols},
              {"cases", cases},
              {"mean", mean},
              {"stddev", stddev},
              {"defined", defined}};
}

}  // namespace mahnet
