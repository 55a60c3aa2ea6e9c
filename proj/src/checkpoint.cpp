#include "fsda/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fsda {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'F', 'S', 'D', 'A', 'C', 'K', 'P', '1'};

json describe(const nn::ParamStore<float>& store, const char* group) {
  json list = json::array();
  for (int i = 0; i < store.size(); ++i) {
    list.push_back({{"name", store.name(i)}, {"group", group}, {"rows", store.value(i).rows()},
                    {"cols", store.value(i).cols()}});
  }
  return list;
}

struct Opened {
  std::ifstream in;
  json header;
};

Opened open_checkpoint(const fs::path& path) {
  Opened o;
  o.in.open(path, std::ios::binary);
  if (!o.in) throw IoError(path.string() + ": cannot open checkpoint");
  char magic[8];
  std::uint64_t len = 0;
  o.in.read(magic, 8);
  o.in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!o.in || std::memcmp(magic, kMagic, 8) != 0) throw InputError(path.string() + ": not a checkpoint file");
  std::string text(len, '\0');
  o.in.read(text.data(), static_cast<std::streamsize>(len));
  if (!o.in) throw InputError(path.string() + ": truncated checkpoint header");
  try {
    o.header = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": bad checkpoint header: " + e.what());
  }
  return o;
}

}  // namespace

void save_checkpoint(const fs::path& path, const FreespaceNet<float>& net, int round) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  json header{{"format", 1}, {"round", round}, {"config", to_json(net.config())}};
  json params = describe(net.generator(), "generator");
  for (auto& p : describe(net.discriminator(), "discriminator")) params.push_back(p);
  header["params"] = std::move(params);
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string() + ": cannot open for writing");
    const std::uint64_t len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    for (const auto* store : {&net.generator(), &net.discriminator()}) {
      for (int i = 0; i < store->size(); ++i) {
        const Mat<float>& v = store->value(i);
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
      }
    }
    if (!out) throw IoError(tmp.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const fs::path& path) {
  Opened o = open_checkpoint(path);
  CheckpointInfo info;
  info.header = o.header;
  info.round = o.header.at("round").get<int>();
  apply_json(info.config, o.header.at("config"));
  info.config.validate();
  return info;
}

FreespaceNet<float> load_checkpoint(const fs::path& path, CheckpointInfo* info_out, const TrainConfig* config) {
  CheckpointInfo info = read_checkpoint_info(path);
  Opened o = open_checkpoint(path);
  FreespaceNet<float> net(config ? *config : info.config, 0);
  for (const auto& p : o.header.at("params")) {
    const std::string name = p.at("name");
    const bool gen = p.at("group") == "generator";
    auto& store = gen ? net.generator() : net.discriminator();
    const auto idx = store.find(name);
    const long rows = p.at("rows"), cols = p.at("cols");
    if (!idx || store.value(*idx).rows() != rows || store.value(*idx).cols() != cols) {
      throw InputError(path.string() + ": parameter '" + name + "' does not match the configured network");
    }
    o.in.read(reinterpret_cast<char*>(store.value(*idx).data()), static_cast<std::streamsize>(rows * cols * sizeof(float)));
    if (!o.in) throw InputError(path.string() + ": truncated parameter data");
  }
  const std::size_t stored = o.header.at("params").size();
  if (stored != static_cast<std::size_t>(net.generator().size() + net.discriminator().size())) {
    throw InputError(path.string() + ": checkpoint parameter count does not match the configured network");
  }
  if (info_out) *info_out = std::move(info);
  return net;
}

}  // namespace fsda
