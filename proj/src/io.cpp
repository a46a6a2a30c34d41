#include "artoveq/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace artoveq::io {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

// Nine significant digits reproduce every float exactly.
double nine_digits(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return std::strtod(buf, nullptr);
}

json float_list(std::span<const float> values) {
  json out = json::array();
  for (float v : values) out.push_back(nine_digits(v));
  return out;
}

std::vector<float> read_floats(const json& arr, const char* what) {
  if (!arr.is_array()) throw FormatError(std::string(what) + ": expected a list");
  std::vector<float> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw FormatError(std::string(what) + ": non-numeric value");
    out.push_back(static_cast<float>(v.get<double>()));
  }
  return out;
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed document: ") + e.what());
  }
}

void check_header(const json& doc, const char* kind) {
  if (!doc.is_object() || !doc.contains("format_version")) {
    throw FormatError(std::string(kind) + ": missing format_version");
  }
  if (doc.at("format_version").get<int>() != kFormatVersion) {
    throw FormatError(std::string(kind) + ": unsupported format_version " +
                      doc.at("format_version").dump());
  }
}

template <typename F>
auto guarded(const char* kind, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(std::string(kind) + ": " + e.what());
  }
}

json layers_to_json(const Mlp<float>& mlp) {
  json layers = json::array();
  for (const auto& l : mlp.layers()) {
    layers.push_back({{"weight_shape", l.weight.shape()},
                      {"weight", float_list(l.weight.value().values())},
                      {"bias_shape", l.bias.shape()},
                      {"bias", float_list(l.bias.value().values())}});
  }
  return layers;
}

void layers_from_json(const json& layers, Mlp<float>& mlp, const char* which) {
  auto& dst = mlp.layers();
  if (!layers.is_array() || layers.size() != dst.size()) {
    throw FormatError(std::string("checkpoint: ") + which + " layer count mismatch");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const auto& l = layers[i];
    const auto ws = l.at("weight_shape").get<grad::Shape>();
    const auto bs = l.at("bias_shape").get<grad::Shape>();
    if (ws != dst[i].weight.shape() || bs != dst[i].bias.shape()) {
      throw FormatError(std::string("checkpoint: ") + which + " layer " +
                        std::to_string(i) + " has shape " + grad::to_string(ws) +
                        ", expected " + grad::to_string(dst[i].weight.shape()));
    }
    auto w = read_floats(l.at("weight"), "weight");
    auto b = read_floats(l.at("bias"), "bias");
    if (w.size() != grad::element_count(ws) || b.size() != grad::element_count(bs)) {
      throw FormatError("checkpoint: value count does not match shape header");
    }
    dst[i].weight.mutable_value().storage() = std::move(w);
    dst[i].bias.mutable_value().storage() = std::move(b);
  }
}

}  // namespace

std::string codebook_to_text(const NestedCodebook<float>& codebook) {
  json rows = json::array();
  const auto cw = codebook.codewords();
  for (std::size_t k = 0; k < cw.size(); ++k) rows.push_back(float_list(cw[k]));
  json doc = {{"format_version", kFormatVersion},
              {"mode", "nested"},
              {"dim", codebook.dim()},
              {"max_level", codebook.max_level()},
              {"codewords", rows}};
  return doc.dump(1) + "\n";
}

std::string codebook_to_text(const ProgressiveCodebook<float>& codebook) {
  json pairs = json::array();
  for (std::size_t l = 1; l <= codebook.max_level(); ++l) {
    pairs.push_back({float_list(codebook.difference(l, 0)),
                     float_list(codebook.difference(l, 1))});
  }
  json doc = {{"format_version", kFormatVersion},
              {"mode", "progressive"},
              {"dim", codebook.dim()},
              {"max_level", codebook.max_level()},
              {"difference_pairs", pairs}};
  return doc.dump(1) + "\n";
}

std::string codebook_mode(const std::string& text) {
  const auto doc = parse(text);
  check_header(doc, "codebook");
  return guarded("codebook", [&] { return doc.at("mode").get<std::string>(); });
}

NestedCodebook<float> nested_from_text(const std::string& text) {
  const auto doc = parse(text);
  check_header(doc, "codebook");
  return guarded("codebook", [&] {
    if (doc.at("mode") != "nested") {
      throw FormatError("codebook: expected mode nested, found " +
                        doc.at("mode").dump());
    }
    const auto dim = doc.at("dim").get<std::size_t>();
    const auto levels = doc.at("max_level").get<std::size_t>();
    const auto& rows = doc.at("codewords");
    if (!rows.is_array() || rows.size() != (std::size_t{1} << levels)) {
      throw FormatError("codebook: expected 2^max_level codewords");
    }
    std::vector<float> values;
    for (const auto& r : rows) {
      const auto v = read_floats(r, "codeword");
      if (v.size() != dim) throw FormatError("codebook: codeword of wrong dimension");
      values.insert(values.end(), v.begin(), v.end());
    }
    return NestedCodebook<float>(dim, levels, std::move(values));
  });
}

ProgressiveCodebook<float> progressive_from_text(const std::string& text) {
  const auto doc = parse(text);
  check_header(doc, "codebook");
  return guarded("codebook", [&] {
    if (doc.at("mode") != "progressive") {
      throw FormatError("codebook: expected mode progressive, found " +
                        doc.at("mode").dump());
    }
    const auto dim = doc.at("dim").get<std::size_t>();
    const auto levels = doc.at("max_level").get<std::size_t>();
    const auto& pairs = doc.at("difference_pairs");
    if (!pairs.is_array() || pairs.size() != levels) {
      throw FormatError("codebook: expected one difference pair per level");
    }
    std::vector<std::vector<float>> out;
    for (const auto& p : pairs) {
      if (!p.is_array() || p.size() != 2) {
        throw FormatError("codebook: difference pair must hold two vectors");
      }
      auto e1 = read_floats(p[0], "difference");
      const auto e2 = read_floats(p[1], "difference");
      if (e1.size() != dim || e2.size() != dim) {
        throw FormatError("codebook: difference vector of wrong dimension");
      }
      e1.insert(e1.end(), e2.begin(), e2.end());
      out.push_back(std::move(e1));
    }
    return ProgressiveCodebook<float>(dim, std::move(out));
  });
}

std::string model_to_text(const TaskModel<float>& model) {
  const auto& s = model.spec();
  json spec = {{"input_dim", s.input_dim},
               {"encoder_hidden", s.encoder_hidden},
               {"decoder_hidden", s.decoder_hidden},
               {"segment_dim", s.segment_dim},
               {"segments", s.segments},
               {"classes", s.classes},
               {"activation", std::string(grad::to_string(s.activation))}};
  json doc = {{"format_version", kFormatVersion},
              {"kind", "task_model"},
              {"spec", spec},
              {"encoder", layers_to_json(model.encoder())},
              {"decoder", layers_to_json(model.decoder())}};
  return doc.dump(1) + "\n";
}

TaskModel<float> model_from_text(const std::string& text) {
  const auto doc = parse(text);
  check_header(doc, "checkpoint");
  return guarded("checkpoint", [&] {
    if (doc.at("kind") != "task_model") {
      throw FormatError("checkpoint: not a task model document");
    }
    const auto& j = doc.at("spec");
    NetworkSpec spec;
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
    spec.decoder_hidden = j.at("decoder_hidden").get<std::vector<std::size_t>>();
    spec.segment_dim = j.at("segment_dim").get<std::size_t>();
    spec.segments = j.at("segments").get<std::size_t>();
    spec.classes = j.at("classes").get<std::size_t>();
    spec.activation = grad::parse_activation(j.at("activation").get<std::string>());
    TaskModel<float> model(spec, 0);
    layers_from_json(doc.at("encoder"), model.encoder(), "encoder");
    layers_from_json(doc.at("decoder"), model.decoder(), "decoder");
    return model;
  });
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save(const std::filesystem::path& path, const NestedCodebook<float>& cb) {
  write_file(path, codebook_to_text(cb));
}
void save(const std::filesystem::path& path, const ProgressiveCodebook<float>& cb) {
  write_file(path, codebook_to_text(cb));
}
void save(const std::filesystem::path& path, const TaskModel<float>& model) {
  write_file(path, model_to_text(model));
}

NestedCodebook<float> load_nested(const std::filesystem::path& path) {
  return nested_from_text(read_file(path));
}
ProgressiveCodebook<float> load_progressive(const std::filesystem::path& path) {
  return progressive_from_text(read_file(path));
}
TaskModel<float> load_model(const std::filesystem::path& path) {
  return model_from_text(read_file(path));
}

}  // namespace artoveq::io
