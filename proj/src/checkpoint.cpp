#include "pedkd/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "pedkd/error.hpp"

namespace pedkd {

namespace {

constexpr const char* kMagic = "pedkd-checkpoint";

std::string dims_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

Shape parse_dims(const std::string& text) {
  if (text == "scalar") return {};
  Shape s;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    try {
      std::size_t used = 0;
      s.push_back(std::stoul(part, &used));
      if (used != part.size()) throw IntegrityError("bad dimension " + part);
    } catch (const std::logic_error&) {
      throw IntegrityError("checkpoint manifest: bad shape '" + text + "'");
    }
  }
  return s;
}

struct ManifestEntry {
  std::size_t offset = 0;
  Shape shape;
};

struct Manifest {
  int version = 0;
  std::string hash;
  std::map<std::string, ManifestEntry> tensors;
};

Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt", std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint manifest in " + dir.string());
  Manifest m;
  std::string line;
  std::size_t expected = 0;
  for (std::size_t n = 0; std::getline(in, line); ++n) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string part; std::getline(ls, part, '\t');) f.push_back(part);
    try {
      if (n == 0) {
        if (f.size() != 2 || f[0] != kMagic) throw IntegrityError("checkpoint manifest: missing header");
        m.version = std::stoi(f[1]);
        if (m.version != kCheckpointVersion)
          throw VersionError("checkpoint format version " + f[1] + " (expected " +
                             std::to_string(kCheckpointVersion) + ")");
      } else if (n == 1) {
        if (f.size() != 2 || f[0] != "config_hash") throw IntegrityError("checkpoint manifest: missing config_hash");
        m.hash = f[1];
      } else if (n == 2) {
        if (f.size() != 2 || f[0] != "tensors") throw IntegrityError("checkpoint manifest: missing tensor count");
        expected = std::stoul(f[1]);
      } else {
        if (f.size() != 3) throw IntegrityError("checkpoint manifest: bad tensor line " + std::to_string(n + 1));
        m.tensors[f[0]] = {std::stoul(f[1]), parse_dims(f[2])};
      }
    } catch (const std::logic_error&) {
      throw IntegrityError("checkpoint manifest: bad number on line " + std::to_string(n + 1));
    }
  }
  if (m.version == 0) throw IntegrityError("checkpoint manifest is empty");
  if (m.tensors.size() != expected) throw IntegrityError("checkpoint manifest: tensor count mismatch");
  return m;
}

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

}  // namespace

void save_checkpoint(const ParameterList& params, const std::string& config_hash, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::binary);
  std::ofstream blob(dir / "tensors.bin", std::ios::binary);
  if (!manifest || !blob) throw IoError("cannot write checkpoint in " + dir.string());
  manifest << kMagic << '\t' << kCheckpointVersion << '\n';
  manifest << "config_hash\t" << config_hash << '\n';
  manifest << "tensors\t" << params.size() << '\n';
  std::size_t offset = 0;
  for (const Parameter* p : params) {
    manifest << p->name << '\t' << offset << '\t' << dims_str(p->value.shape()) << '\n';
    for (double v : p->value.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                             static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
      blob.write(bytes, 4);
    }
    offset += p->value.numel();
  }
  if (!manifest || !blob) throw IoError("checkpoint write failed in " + dir.string());
}

std::string checkpoint_hash(const std::filesystem::path& dir) { return read_manifest(dir).hash; }

void load_checkpoint(const ParameterList& params, const std::filesystem::path& dir, const std::string& config_hash,
                     bool allow_hash_mismatch) {
  const Manifest m = read_manifest(dir);
  if (!allow_hash_mismatch && m.hash != config_hash)
    throw VersionError("checkpoint config hash " + m.hash + " does not match " + config_hash);
  std::ifstream in(dir / "tensors.bin", std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint blob in " + dir.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t total = 0;
  for (const auto& [name, e] : m.tensors) total = std::max(total, e.offset + numel(e.shape));
  if (bytes.size() != total * 4)
    throw IntegrityError("checkpoint blob holds " + std::to_string(bytes.size()) + " bytes, manifest needs " +
                         std::to_string(total * 4));
  if (m.tensors.size() != params.size())
    throw IntegrityError("checkpoint has " + std::to_string(m.tensors.size()) + " tensors, model has " +
                         std::to_string(params.size()));

  std::vector<Tensor> loaded;
  for (const Parameter* p : params) {
    auto it = m.tensors.find(p->name);
    if (it == m.tensors.end()) throw IntegrityError("checkpoint lacks tensor " + p->name);
    if (it->second.shape != p->value.shape())
      throw IntegrityError("checkpoint tensor " + p->name + " has shape " + dims_str(it->second.shape) +
                           ", model expects " + dims_str(p->value.shape()));
    Tensor t(p->value.shape());
    const auto* src = reinterpret_cast<const unsigned char*>(bytes.data()) + it->second.offset * 4;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const unsigned char* b = src + 4 * i;
      const std::uint32_t bits = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
                                 (std::uint32_t{b[3]} << 24);
      t[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    loaded.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = std::move(loaded[i]);
}

}  // namespace pedkd
