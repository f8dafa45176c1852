#pragma once

// HTTP inference service. The model is loaded once, treated as immutable
// and shared across requests; every request allocates its own network
// handle copy-free by cloning only the mutable running-stat buffers.

#include <atomic>

// pipeline.hpp pulls in Eigen, which must precede httplib.h: a glibc
// macro leaked by httplib's system headers breaks Eigen's product kernels
// when included the other way around.
#include "mahnet/pipeline.hpp"

#include "httplib.h"

namespace mahnet {

struct ServiceConfig {
  NetworkSpec spec;
  std::string checkpoint;  // optional; empty serves the freshly built net
  uint64_t seed = 0;
  size_t max_body_bytes = 8 * 1024 * 1024;
};

class SegmentationService {
 public:
  explicit SegmentationService(const ServiceConfig& cfg)
      : cfg_(cfg), net_(build_network(cfg.spec, cfg.seed)) {
    if (!cfg.checkpoint.empty()) net_.load_state(load_checkpoint(cfg.checkpoint));
    param_count_ = net_.param_count();
  }

  void attach(httplib::Server& srv) {
    srv.set_payload_max_length(cfg_.max_body_bytes);

    srv.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(Json{{"status", "ok"}}.dump(), "application/json");
    });

    srv.Get("/v1/model", [this](const httplib::Request&, httplib::Response& res) {
      Json j{{"spec", spec_to_json(cfg_.spec)}, {"param_count", param_count_}};
      res.set_content(j.dump(), "application/json");
    });

    srv.Post("/v1/segment", [this](const httplib::Request& req, httplib::Response& res) {
      handle_segment(req, res);
    });

    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty())
        res.set_content(Json{{"error", "not found"}}.dump(), "application/json");
    });

    srv.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
          res.status = 500;
          res.set_content(Json{{"error", "internal error"}}.dump(), "application/json");
        });
  }

 private:
  static void fail(httplib::Response& res, int status, const std::string& msg) {
    res.status = status;
    res.set_content(Json{{"error", msg}}.dump(), "application/json");
  }

  static Json rle_encode(const Mask2D& m) {
    Json runs = Json::array();
    size_t i = 0;
    while (i < m.v.size()) {
      size_t j = i;
      while (j < m.v.size() && m.v[j] == m.v[i]) ++j;
      runs.push_back(Json::array({static_cast<int>(m.v[i]), static_cast<long>(j - i)}));
      i = j;
    }
    return runs;
  }

  static std::string base64(const std::vector<uint8_t>& data) {
    static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    for (size_t i = 0; i < data.size(); i += 3) {
      uint32_t b = static_cast<uint32_t>(data[i]) << 16;
      if (i + 1 < data.size()) b |= static_cast<uint32_t>(data[i + 1]) << 8;
      if (i + 2 < data.size()) b |= data[i + 2];
      out.push_back(tbl[(b >> 18) & 63]);
      out.push_back(tbl[(b >> 12) & 63]);
      out.push_back(i + 1 < data.size() ? tbl[(b >> 6) & 63] : '=');
      out.push_back(i + 2 < data.size() ? tbl[b & 63] : '=');
    }
    return out;
  }

  void handle_segment(const httplib::Request& req, httplib::Response& res) {
    if (req.body.size() > cfg_.max_body_bytes) {
      fail(res, 413, "request body exceeds size cap");
      return;
    }
    auto t0 = std::chrono::steady_clock::now();

    Image8 img;
    try {
      if (req.get_header_value("Content-Type") == "application/json") {
        Json j = Json::parse(req.body);
        detail::require_keys(j, "segment request", {"width", "height", "pixels"});
        int w = j.at("width"), h = j.at("height");
        const auto& px = j.at("pixels");
        if (w < 1 || h < 1 || !px.is_array() ||
            px.size() != static_cast<size_t>(w) * static_cast<size_t>(h))
          throw std::invalid_argument("pixel count does not match dims");
        img = Image8(h, w);
        for (size_t i = 0; i < img.v.size(); ++i) {
          int v = px[i];
          if (v < 0 || v > 255) throw std::invalid_argument("pixel out of range");
          img.v[i] = static_cast<uint8_t>(v);
        }
      } else {
        img = decode_png(std::vector<uint8_t>(req.body.begin(), req.body.end()));
      }
    } catch (const std::exception& e) {
      fail(res, 400, std::string("bad image: ") + e.what());
      return;
    }

    int div = 1 << cfg_.spec.depth;
    if (img.h % div != 0 || img.w % div != 0) {
      fail(res, 400, "image dims must be divisible by " + std::to_string(div));
      return;
    }

    Mask2D mask;
    double pmin, pmax, pmean;
    try {
      // evaluation-mode forward never writes to the shared parameters or
      // running stats, so concurrent requests can use the one network
      ForwardOut out = forward(net_, image_to_tensor(img), false);
      mask = seg_to_mask(out.seg);
      const int c = out.seg.dim(3);
      pmin = 1.0;
      pmax = 0.0;
      pmean = 0.0;
      const long npix = out.seg.size() / c;
      for (long p = 0; p < npix; ++p) {
        double fg = 1.0 - out.seg[p * c];
        pmin = std::min(pmin, fg);
        pmax = std::max(pmax, fg);
        pmean += fg;
      }
      pmean /= static_cast<double>(npix);
    } catch (const std::exception&) {
      fail(res, 500, "internal error");
      return;
    }

    Image8 mask_img(mask.h, mask.w);
    for (size_t i = 0; i < mask.v.size(); ++i) mask_img.v[i] = mask.v[i] ? 255 : 0;
    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
    Json j{{"run_id", next_run_id()},
           {"width", mask.w},
           {"height", mask.h},
           {"mask_rle", rle_encode(mask)},
           {"mask_png_base64", base64(encode_png(mask_img))},
           {"probability", Json{{"min", pmin}, {"max", pmax}, {"mean", pmean}}},
           {"latency_ms", std::max(ms, 1e-3)}};
    res.set_content(j.dump(), "application/json");
  }

  std::string next_run_id() { return "run-" + std::to_string(++run_counter_); }

  ServiceConfig cfg_;
  Network net_;
  long param_count_ = 0;
  std::atomic<long> run_counter_{0};
};

}  // namespace mahnet
