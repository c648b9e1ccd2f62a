#include "tcan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tcan/errors.hpp"

namespace tcan {

using nlohmann::json;

namespace {

std::filesystem::path blob_path_for(const std::filesystem::path& manifest_path) {
  std::filesystem::path blob = manifest_path;
  blob.replace_extension(".bin");
  return blob;
}

void put_le(std::vector<unsigned char>& out, double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

const Tensor& Checkpoint::get(std::string_view name) const {
  for (const NamedTensor& nt : tensors)
    if (nt.name == name) return nt.tensor;
  throw DataError("checkpoint has no tensor named '" + std::string(name) + "'");
}

bool Checkpoint::contains(std::string_view name) const {
  for (const NamedTensor& nt : tensors)
    if (nt.name == name) return true;
  return false;
}

void save_checkpoint(const std::filesystem::path& manifest_path, const Checkpoint& checkpoint) {
  const std::filesystem::path blob_path = blob_path_for(manifest_path);
  if (manifest_path.has_parent_path()) std::filesystem::create_directories(manifest_path.parent_path());

  std::vector<unsigned char> blob;
  json entries = json::array();
  for (const NamedTensor& nt : checkpoint.tensors) {
    const std::size_t offset = blob.size();
    for (double x : nt.tensor.data()) put_le(blob, x);
    entries.push_back({{"name", nt.name},
                       {"shape", nt.tensor.shape()},
                       {"offset", offset},
                       {"bytes", blob.size() - offset}});
  }
  json manifest = {{"magic", kCheckpointMagic},
                   {"dtype", "f64le"},
                   {"blob", blob_path.filename().string()},
                   {"blob_bytes", blob.size()},
                   {"tensors", entries},
                   {"meta", checkpoint.meta}};

  std::ofstream bout(blob_path, std::ios::binary | std::ios::trunc);
  bout.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  std::ofstream mout(manifest_path, std::ios::trunc);
  mout << manifest.dump(2) << '\n';
  if (!bout || !mout) throw DataError("failed to write checkpoint " + manifest_path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream min(manifest_path);
  if (!min) throw DataError("cannot open checkpoint manifest " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(min);
  } catch (const json::parse_error& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("magic", "") != kCheckpointMagic) {
    throw DataError("not a TCAN1 checkpoint: " + manifest_path.string());
  }
  const std::filesystem::path blob_path =
      manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bin(blob_path, std::ios::binary);
  if (!bin) throw DataError("cannot open checkpoint blob " + blob_path.string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (blob.size() != manifest.at("blob_bytes").get<std::size_t>()) {
    throw DataError("checkpoint blob size does not match manifest");
  }

  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", json::object());
  for (const json& e : manifest.at("tensors")) {
    Shape shape = e.at("shape").get<Shape>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t bytes = e.at("bytes").get<std::size_t>();
    if (bytes != shape_numel(shape) * 8 || offset + bytes > blob.size()) {
      throw DataError("checkpoint entry '" + e.at("name").get<std::string>() + "' is inconsistent");
    }
    std::vector<double> data(bytes / 8);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_le(blob.data() + offset + 8 * i);
    ckpt.tensors.push_back({e.at("name").get<std::string>(), Tensor::from_data(std::move(shape), std::move(data))});
  }
  return ckpt;
}

}  // namespace tcan
