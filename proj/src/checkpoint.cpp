#include "deconf/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "deconf/common.hpp"
#include "deconf/csv.hpp"

namespace deconf::io {

void save_checkpoint(const std::filesystem::path& dir,
                     const std::vector<numkit::TensorRef>& tensors,
                     nlohmann::ordered_json manifest_extra) {
  std::filesystem::create_directories(dir);

  nlohmann::ordered_json manifest = std::move(manifest_extra);
  manifest["format"] = "deconf-checkpoint-v1";
  manifest["dtype"] = "float64-le";
  auto tensor_list = nlohmann::ordered_json::array();
  for (const auto& t : tensors) {
    tensor_list.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  manifest["tensors"] = tensor_list;

  {
    AtomicFile weights(dir / "weights.bin");
    for (const auto& t : tensors) {
      weights.stream().write(reinterpret_cast<const char*>(t.data),
                             static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    weights.commit();
  }
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

nlohmann::ordered_json load_checkpoint_manifest(
    const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint manifest " + path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "deconf-checkpoint-v1") {
    throw IoError("unrecognized checkpoint format in " + path.string());
  }
  return manifest;
}

void load_checkpoint_weights(const std::filesystem::path& dir,
                             const std::vector<numkit::TensorRef>& tensors) {
  const auto manifest = load_checkpoint_manifest(dir);
  const auto& declared = manifest.at("tensors");
  if (declared.size() != tensors.size()) {
    throw IoError("checkpoint tensor count mismatch in " + dir.string());
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& d = declared.at(i);
    if (d.at("name").get<std::string>() != tensors[i].name ||
        d.at("rows").get<std::size_t>() != tensors[i].rows ||
        d.at("cols").get<std::size_t>() != tensors[i].cols) {
      throw IoError("checkpoint tensor " + tensors[i].name +
                    " does not match manifest in " + dir.string());
    }
  }
  std::ifstream in(dir / "weights.bin", std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / "weights.bin").string());
  for (const auto& t : tensors) {
    in.read(reinterpret_cast<char*>(t.data),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoError("truncated weights.bin in " + dir.string());
  }
}

}  // namespace deconf::io
