#include "magic/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "magic/error.hpp"

namespace magic {

namespace {

void write_le_doubles(std::ofstream& f, const std::vector<double>& v) {
  // manifest promises little-endian doubles regardless of host order
  std::vector<unsigned char> buf(v.size() * 8);
  for (size_t i = 0; i < v.size(); ++i) {
    uint64_t bits;
    std::memcpy(&bits, &v[i], 8);
    for (int b = 0; b < 8; ++b) buf[i * 8 + static_cast<size_t>(b)] =
        static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
  }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void read_le_doubles(std::ifstream& f, std::vector<double>& v) {
  std::vector<unsigned char> buf(v.size() * 8);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  MAGIC_CHECK(f.good(), "checkpoint blob truncated");
  for (size_t i = 0; i < v.size(); ++i) {
    uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | buf[i * 8 + static_cast<size_t>(b)];
    std::memcpy(&v[i], &bits, 8);
  }
}

}  // namespace

void save_checkpoint(const std::string& stem, const Checkpoint& ck) {
  nlohmann::ordered_json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["meta"] = ck.meta.is_null() ? nlohmann::ordered_json::object() : ck.meta;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  int64_t offset = 0;
  for (auto& [name, arr] : ck.tensors) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["shape"] = arr.shape;
    t["offset"] = offset;
    tensors.push_back(std::move(t));
    offset += arr.size() * 8;
  }
  manifest["tensors"] = std::move(tensors);

  std::ofstream mf(stem + ".json", std::ios::binary);
  MAGIC_CHECK(mf.good(), "cannot open '", stem, ".json' for writing");
  mf << manifest.dump(2) << '\n';
  MAGIC_CHECK(mf.good(), "write failed for '", stem, ".json'");

  std::ofstream bf(stem + ".bin", std::ios::binary);
  MAGIC_CHECK(bf.good(), "cannot open '", stem, ".bin' for writing");
  for (auto& [name, arr] : ck.tensors) write_le_doubles(bf, arr.data);
  MAGIC_CHECK(bf.good(), "write failed for '", stem, ".bin'");
}

Checkpoint load_checkpoint(const std::string& stem) {
  std::ifstream mf(stem + ".json");
  MAGIC_CHECK(mf.good(), "cannot open checkpoint manifest '", stem, ".json'");
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(mf);
  } catch (const std::exception& e) {
    throw Error(detail::cat("corrupt checkpoint manifest '", stem, ".json': ", e.what()));
  }
  MAGIC_CHECK(manifest.value("format", "") == kCheckpointFormat,
              "unsupported checkpoint format in '", stem, ".json'");

  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::ordered_json::object());
  std::ifstream bf(stem + ".bin", std::ios::binary);
  MAGIC_CHECK(bf.good(), "cannot open checkpoint blob '", stem, ".bin'");
  int64_t expect_offset = 0;
  for (auto& t : manifest.at("tensors")) {
    std::string name = t.at("name").get<std::string>();
    Shape shape = t.at("shape").get<Shape>();
    int64_t offset = t.at("offset").get<int64_t>();
    MAGIC_CHECK(offset == expect_offset, "checkpoint tensor '", name,
                "' offset mismatch (manifest ", offset, ", expected ", expect_offset, ")");
    Array arr(shape);
    read_le_doubles(bf, arr.data);
    expect_offset += arr.size() * 8;
    ck.tensors.emplace(std::move(name), std::move(arr));
  }
  return ck;
}

}  // namespace magic
