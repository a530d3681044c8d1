#include "mmta/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "mmta/binary_io.hpp"
#include "mmta/error.hpp"

namespace mmta {

namespace binio {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace binio

namespace {
constexpr std::string_view kMagic = "MMTACKPT";
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kMagic);
  binio::put<std::uint32_t>(out, kCheckpointVersion);
  binio::put_string(out, format_key_values(checkpoint.config));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, m] : checkpoint.tensors) {
    binio::put_string(out, name);
    binio::put<std::uint64_t>(out, m.rows());
    binio::put<std::uint64_t>(out, m.cols());
    for (double v : m.values()) binio::put<double>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, std::string_view source) {
  binio::Reader in(bytes, source);
  if (in.take(kMagic.size(), "magic") != kMagic) throw IoError(std::string(source) + ": not a model checkpoint");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw IoError(std::string(source) + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.config = parse_key_values(in.get_string("config record"), source);
  const auto count = in.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.get_string("tensor name");
    const auto rows = in.get<std::uint64_t>("tensor rows");
    const auto cols = in.get<std::uint64_t>("tensor cols");
    if (cols != 0 && rows > in.remaining() / 8 / cols) {
      throw IoError(std::string(source) + ": truncated: tensor '" + name + "' declares " + std::to_string(rows) + "x" +
                    std::to_string(cols) + " values, only " + std::to_string(in.remaining()) + " bytes remain");
    }
    Matrix m(rows, cols);
    for (double& v : m.values()) v = in.get<double>("tensor " + name);
    ck.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (in.remaining() != 0) {
    throw IoError(std::string(source) + ": " + std::to_string(in.remaining()) + " trailing bytes after last tensor");
  }
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  binio::write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binio::read_file(path), path.string());
}

template <std::floating_point Real>
Checkpoint to_checkpoint(const EncoderModel<Real>& model) {
  Checkpoint ck;
  ck.config = model.config().to_key_values();
  for (const auto* p : model.parameters()) ck.tensors.emplace_back(p->name, convert<double>(p->value));
  return ck;
}

template <std::floating_point Real>
EncoderModel<Real> model_from_checkpoint(const Checkpoint& checkpoint) {
  EncoderConfig config = EncoderConfig::from_key_values(checkpoint.config);
  auto model = EncoderModel<Real>::initialize(config, 0);
  auto params = model.parameters();
  if (params.size() != checkpoint.tensors.size()) {
    throw IoError("checkpoint holds " + std::to_string(checkpoint.tensors.size()) + " tensors, config implies " +
                  std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, m] = checkpoint.tensors[i];
    if (name != params[i]->name) {
      throw IoError("checkpoint tensor " + std::to_string(i) + " is '" + name + "', expected '" + params[i]->name + "'");
    }
    if (m.rows() != params[i]->value.rows() || m.cols() != params[i]->value.cols()) {
      throw IoError("checkpoint tensor '" + name + "' is " + shape_string(m) + ", expected " +
                    shape_string(params[i]->value));
    }
    params[i]->value = convert<Real>(m);
  }
  return model;
}

template Checkpoint to_checkpoint(const EncoderModel<float>&);
template Checkpoint to_checkpoint(const EncoderModel<double>&);
template EncoderModel<float> model_from_checkpoint(const Checkpoint&);
template EncoderModel<double> model_from_checkpoint(const Checkpoint&);

}  // namespace mmta
