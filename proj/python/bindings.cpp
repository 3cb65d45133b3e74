#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "getcap/attention.hpp"
#include "getcap/checkpoint.hpp"
#include "getcap/cider.hpp"
#include "getcap/commands.hpp"
#include "getcap/errors.hpp"
#include "getcap/run_config.hpp"

namespace py = pybind11;
using namespace getcap;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0));
  const auto c = static_cast<std::size_t>(a.shape(1));
  return Tensor({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict caption_dict(const CaptionRecord& r) {
  py::dict d;
  d["image_id"] = r.image_id;
  d["tokens"] = r.tokens;
  d["text"] = r.text;
  d["log_prob"] = r.log_prob;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Transformer image captioning core with a global image vector";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<LookupError>(m, "LookupError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<CorruptionError>(m, "CorruptionError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<DecodeError>(m, "DecodeError", base.ptr());

  m.attr("PAD") = kPad;
  m.attr("BOS") = kBos;
  m.attr("EOS") = kEos;
  m.attr("UNK") = kUnk;

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init(&default_run_config))
      .def_static("parse", &parse_run_config, py::arg("text"))
      .def_static("load", &load_run_config, py::arg("path"))
      .def_readwrite("name", &RunConfig::name)
      .def_readwrite("seed", &RunConfig::seed)
      .def("violations", &RunConfig::violations)
      .def("to_text", [](const RunConfig& c) { return to_text(c); })
      .def("__repr__", [](const RunConfig& c) { return "<RunConfig " + c.name + ">"; });
  m.def("config_keys", &run_config_keys);

  m.def("tokenize", &tokenize, py::arg("text"));

  m.def(
      "cider_d",
      [](const TokenSeq& candidate, const std::vector<TokenSeq>& references,
         const std::vector<std::vector<TokenSeq>>& corpus) {
        return cider_d(candidate, references, build_idf(corpus));
      },
      py::arg("candidate"), py::arg("references"), py::arg("corpus"),
      "CIDEr-D of one candidate, with document frequencies taken from `corpus` "
      "(one list of references per image).");

  m.def(
      "attention",
      [](const Array& q, const Array& k, const Array& v, std::optional<py::array_t<bool>> mask) {
        Mask mk;
        if (mask) {
          if (mask->ndim() != 2) throw DimensionError("mask must be 2-d");
          mk.rows = static_cast<std::size_t>(mask->shape(0));
          mk.cols = static_cast<std::size_t>(mask->shape(1));
          auto view = mask->unchecked<2>();
          for (std::size_t i = 0; i < mk.rows; ++i)
            for (std::size_t j = 0; j < mk.cols; ++j)
              mk.allow.push_back(view(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(j)) ? 1 : 0);
        }
        AttentionResult r =
            scaled_dot_product_attention(to_tensor(q), to_tensor(k), to_tensor(v), mask ? &mk : nullptr);
        return py::make_tuple(to_array(r.output), to_array(r.weights));
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("mask") = py::none(),
      "Scaled dot-product attention; returns (output, weights).");

  m.def(
      "beam_search",
      [](const std::function<std::vector<double>(std::vector<int>)>& step, std::size_t width,
         std::size_t max_len) {
        StepFn fn = [&](std::span<const int> prefix) {
          return step(std::vector<int>(prefix.begin(), prefix.end()));
        };
        py::list out;
        for (const auto& h : beam_search(fn, width, max_len)) {
          py::dict d;
          d["tokens"] = h.tokens;
          d["log_prob"] = h.log_prob;
          d["forced"] = h.forced;
          out.append(d);
        }
        return out;
      },
      py::arg("step"), py::arg("width"), py::arg("max_len"),
      "Beam search over a Python step function mapping a BOS-led prefix to "
      "next-token log-probabilities.");

  m.def(
      "train",
      [](const RunConfig& cfg, const std::filesystem::path& out_dir) {
        std::ostringstream report;
        auto ckpt = cmd_train(cfg, out_dir, report);
        return py::make_tuple(ckpt, report.str());
      },
      py::arg("config"), py::arg("out_dir"), "Runs cross-entropy training; returns (checkpoint, report).");

  m.def(
      "finetune",
      [](const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir) {
        std::ostringstream report;
        auto ckpt = cmd_finetune(cfg, checkpoint, out_dir, report);
        return py::make_tuple(ckpt, report.str());
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("out_dir"));

  m.def(
      "caption",
      [](const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::vector<std::string>& ids,
         const std::filesystem::path& out_dir) {
        std::ostringstream report;
        py::list out;
        for (const auto& r : cmd_caption(cfg, checkpoint, ids, out_dir, report)) out.append(caption_dict(r));
        return out;
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("image_ids") = std::vector<std::string>{},
      py::arg("out_dir"));

  m.def(
      "evaluate",
      [](const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::string& split,
         const std::filesystem::path& out_dir) {
        std::ostringstream report;
        EvalResult r = cmd_eval(cfg, checkpoint, split, out_dir, report);
        return py::make_tuple(r.mean_cider, r.scores);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("split"), py::arg("out_dir"),
      "Returns (mean CIDEr-D, per-image scores).");

  m.def(
      "attribute",
      [](const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::string& image_id,
         const std::filesystem::path& out_dir) {
        std::ostringstream report;
        AttributionRecords recs = cmd_attribute(cfg, checkpoint, image_id, out_dir, report);
        py::list words;
        for (const auto& w : recs.words) {
          py::dict d;
          d["token"] = w.token;
          d["regions"] = w.regions;
          d["top_region"] = w.top_region;
          d["value"] = w.value;
          d["baseline"] = w.baseline;
          words.append(d);
        }
        return py::make_tuple(recs.caption, words);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("image_id"), py::arg("out_dir"),
      "Returns (caption tokens, per-word region attributions).");

  m.def(
      "gradcheck",
      [](const RunConfig& cfg, const std::filesystem::path& out_dir) {
        std::ostringstream report;
        GradcheckResult r = cmd_gradcheck(cfg, out_dir, report);
        py::list cases;
        for (const auto& [label, rep] : r.cases) cases.append(py::make_tuple(label, rep.max_rel_error, rep.passed));
        return py::make_tuple(r.passed, cases);
      },
      py::arg("config"), py::arg("out_dir"));
}
