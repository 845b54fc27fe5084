#include <bit>
#include <cstring>
#include <fstream>

#include "icl/errors.hpp"
#include "icl/transformer.hpp"

namespace icl {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const unsigned char* p, std::size_t len) {
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

// Little-endian bytes of a double, whatever the host order.
void le_bytes(double v, unsigned char out[8]) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out[b] = static_cast<unsigned char>(u >> (8 * b));
}

double from_le(const unsigned char in[8]) {
  std::uint64_t u = 0;
  for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(in[b]) << (8 * b);
  return std::bit_cast<double>(u);
}

// Row-major traversal so the file layout matches the manifest shapes.
template <class F>
void each_entry(const Matrix& m, F&& f) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) f(m(i, j));
}

void write_matrix(std::ofstream& out, const Matrix& m) {
  unsigned char buf[8];
  each_entry(m, [&](double v) {
    le_bytes(v, buf);
    out.write(reinterpret_cast<const char*>(buf), 8);
  });
}

void read_matrix(std::ifstream& in, Matrix& m, const std::filesystem::path& path) {
  unsigned char buf[8];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!in.read(reinterpret_cast<char*>(buf), 8)) throw FileError("checkpoint data truncated: " + path.string());
      m(i, j) = from_le(buf);
    }
  }
}

}  // namespace

std::uint64_t params_hash(const TransformerParams& params) {
  std::uint64_t h = kFnvOffset;
  unsigned char buf[8];
  for (const auto* m : params.tensors()) {
    each_entry(*m, [&](double v) {
      le_bytes(v, buf);
      fnv(h, buf, 8);
    });
  }
  return h;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  std::uint64_t h = kFnvOffset;
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    fnv(h, reinterpret_cast<const unsigned char*>(buf), static_cast<std::size_t>(in.gcount()));
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& manifest, const TransformerParams& params,
                     const CheckpointExtras& extras) {
  const auto tensors = params.tensors();
  const auto names = params.tensor_names();
  const bool moments = !extras.adam_m.empty();
  if (moments && (extras.adam_m.size() != tensors.size() || extras.adam_v.size() != tensors.size()))
    throw ShapeError("optimizer moments do not match the parameter list");

  std::filesystem::path data = manifest;
  data.replace_extension(".bin");
  if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());

  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    index.push_back({{"name", names[k]}, {"shape", {tensors[k]->rows(), tensors[k]->cols()}}, {"offset", offset}});
    offset += static_cast<std::size_t>(tensors[k]->size());
  }
  {
    std::ofstream out(data, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot write " + data.string());
    for (const auto* m : tensors) write_matrix(out, *m);
    if (moments) {
      for (const auto& m : extras.adam_m) write_matrix(out, m);
      for (const auto& m : extras.adam_v) write_matrix(out, m);
    }
    if (!out) throw FileError("write failed: " + data.string());
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(params_hash(params)));
  nlohmann::json j = {{"format", "icl_lab-checkpoint-1"},
                      {"config", to_json(params.cfg)},
                      {"data_file", data.filename().string()},
                      {"dtype", "float64-le"},
                      {"tensors", index},
                      {"parameter_count", offset},
                      {"params_hash", hex},
                      {"step", extras.step},
                      {"optimizer_moments", moments},
                      {"meta", extras.meta}};
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw FileError("cannot write " + manifest.string());
  out << j.dump(2) << '\n';
}

TransformerParams load_checkpoint(const std::filesystem::path& manifest, CheckpointExtras* extras) {
  std::ifstream min(manifest);
  if (!min) throw FileError("checkpoint not found: " + manifest.string());
  nlohmann::json j;
  try {
    min >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FileError("malformed checkpoint manifest " + manifest.string() + ": " + e.what());
  }
  if (j.value("format", "") != "icl_lab-checkpoint-1") throw FileError("unknown checkpoint format in " + manifest.string());
  TransformerParams p;
  p.cfg = tf_config_from_json(j.at("config"));
  p.cfg.validate();
  Rng unused(0);
  p = init_params(p.cfg, InitScheme::zero, unused);
  const auto tensors = p.tensors();
  const auto& index = j.at("tensors");
  if (index.size() != tensors.size()) throw FileError("checkpoint tensor count does not match its config");
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto shape = index[k].at("shape");
    if (shape[0].get<long>() != tensors[k]->rows() || shape[1].get<long>() != tensors[k]->cols())
      throw FileError("checkpoint tensor " + index[k].at("name").get<std::string>() + " has the wrong shape");
  }
  const auto data = manifest.parent_path() / j.at("data_file").get<std::string>();
  std::ifstream in(data, std::ios::binary);
  if (!in) throw FileError("checkpoint data not found: " + data.string());
  for (auto* m : tensors) read_matrix(in, *m, data);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(params_hash(p)));
  if (j.contains("params_hash") && j.at("params_hash").get<std::string>() != hex)
    throw FileError("checkpoint data does not match its recorded hash: " + data.string());
  if (extras) {
    extras->step = j.value("step", 0LL);
    extras->meta = j.value("meta", nlohmann::json::object());
    extras->adam_m.clear();
    extras->adam_v.clear();
    if (j.value("optimizer_moments", false)) {
      for (auto* m : tensors) {
        extras->adam_m.push_back(Matrix::Zero(m->rows(), m->cols()));
        read_matrix(in, extras->adam_m.back(), data);
      }
      for (auto* m : tensors) {
        extras->adam_v.push_back(Matrix::Zero(m->rows(), m->cols()));
        read_matrix(in, extras->adam_v.back(), data);
      }
    }
  }
  return p;
}

}  // namespace icl
