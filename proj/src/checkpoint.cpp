#include "keyloco/cli/checkpoint.hpp"

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace keyloco::cli {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

using nlohmann::json;
namespace fs = std::filesystem;

using Arr = autodiff::Array<float>;

[[noreturn]] void fail(const std::string& dir, const std::string& what) {
  throw std::runtime_error("checkpoint: " + dir + ": " + what);
}

json load_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(dir, "cannot open manifest.json");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail(dir, std::string("manifest.json is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("version", 0) != 1) fail(dir, "unsupported manifest version");
  if (j.value("dtype", "") != "f32") fail(dir, "unsupported dtype");
  return j;
}

void append_array(std::ofstream& bin, json& entries, const std::string& name, const Arr& a,
                  uint64_t& offset) {
  json e;
  e["name"] = name;
  e["rows"] = a.rows();
  e["cols"] = a.cols();
  e["offset"] = offset;
  entries.push_back(std::move(e));
  const uint64_t bytes = uint64_t(a.size()) * sizeof(float);
  bin.write(reinterpret_cast<const char*>(a.data.data()), std::streamsize(bytes));
  offset += bytes;
}

void read_array(const std::string& dir, const std::vector<char>& blob, const json& e,
                uint64_t expect_offset, Arr& out) {
  const int rows = e.at("rows").get<int>();
  const int cols = e.at("cols").get<int>();
  const uint64_t offset = e.at("offset").get<uint64_t>();
  if (offset != expect_offset) fail(dir, "offsets out of order in manifest");
  if (out.rows() != rows || out.cols() != cols)
    fail(dir, "shape mismatch for '" + e.at("name").get<std::string>() + "': file has " +
                  std::to_string(rows) + "x" + std::to_string(cols) + ", network wants " +
                  std::to_string(out.rows()) + "x" + std::to_string(out.cols()));
  const uint64_t bytes = uint64_t(out.size()) * sizeof(float);
  if (offset + bytes > blob.size()) fail(dir, "params.bin too small");
  std::memcpy(out.data.data(), blob.data() + offset, bytes);
}

}  // namespace

void save_checkpoint(const std::string& dir, rl::Trainer<float>& tr,
                     const std::string& config_hash) {
  fs::create_directories(dir);
  const std::string bin_tmp = dir + "/params.bin.tmp";
  const std::string man_tmp = dir + "/manifest.json.tmp";

  std::ofstream bin(bin_tmp, std::ios::binary | std::ios::trunc);
  if (!bin) fail(dir, "cannot create params.bin");

  json man;
  man["version"] = 1;
  man["dtype"] = "f32";
  man["iteration"] = tr.iteration();
  man["lr"] = tr.learning_rate();
  man["config_hash"] = config_hash;

  uint64_t offset = 0;
  json params = json::array();
  for (const auto& p : tr.named_params()) append_array(bin, params, p.name, *p.arr, offset);
  man["params"] = std::move(params);

  json opts = json::array();
  for (const auto& snap : tr.optimizer_snapshots()) {
    json o;
    o["name"] = snap.name;
    o["steps"] = snap.steps;
    json arrays = json::array();
    for (const Arr& a : snap.state) append_array(bin, arrays, snap.name, a, offset);
    o["arrays"] = std::move(arrays);
    opts.push_back(std::move(o));
  }
  man["optimizers"] = std::move(opts);
  man["total_bytes"] = offset;

  bin.close();
  if (!bin) fail(dir, "write failed for params.bin");

  std::ofstream mf(man_tmp, std::ios::binary | std::ios::trunc);
  if (!mf) fail(dir, "cannot create manifest.json");
  mf << man.dump(2) << "\n";
  mf.close();
  if (!mf) fail(dir, "write failed for manifest.json");

  fs::rename(bin_tmp, dir + "/params.bin");
  fs::rename(man_tmp, dir + "/manifest.json");
}

CheckpointInfo read_checkpoint_info(const std::string& dir) {
  const json man = load_manifest(dir);
  CheckpointInfo info;
  info.version = man.at("version").get<int>();
  info.iteration = man.at("iteration").get<int>();
  info.lr = man.at("lr").get<double>();
  info.config_hash = man.value("config_hash", "");
  return info;
}

void load_checkpoint(const std::string& dir, rl::Trainer<float>& tr) {
  const json man = load_manifest(dir);

  std::ifstream bin(dir + "/params.bin", std::ios::binary);
  if (!bin) fail(dir, "cannot open params.bin");
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (man.contains("total_bytes") && blob.size() != man["total_bytes"].get<uint64_t>())
    fail(dir, "params.bin size does not match manifest");

  auto named = tr.named_params();
  const json& params = man.at("params");
  if (params.size() != named.size())
    fail(dir, "parameter count mismatch: file has " + std::to_string(params.size()) +
                  ", network wants " + std::to_string(named.size()));
  uint64_t offset = 0;
  for (size_t i = 0; i < named.size(); ++i) {
    const std::string name = params[i].at("name").get<std::string>();
    if (name != named[i].name)
      fail(dir, "parameter order mismatch at index " + std::to_string(i) + ": file has '" + name +
                    "', network wants '" + named[i].name + "'");
    read_array(dir, blob, params[i], offset, *named[i].arr);
    offset += uint64_t(named[i].arr->size()) * sizeof(float);
  }

  // Optimizer entries must line up one-to-one with the trainer's optimizers.
  auto expected = tr.optimizer_snapshots();
  const json& opts = man.at("optimizers");
  if (opts.size() != expected.size()) fail(dir, "optimizer count mismatch");
  for (size_t i = 0; i < opts.size(); ++i) {
    const json& o = opts[i];
    rl::Trainer<float>::OptSnapshot snap;
    snap.name = o.at("name").get<std::string>();
    if (snap.name != expected[i].name)
      fail(dir, "optimizer order mismatch: file has '" + snap.name + "', network wants '" +
                    expected[i].name + "'");
    snap.steps = o.at("steps").get<int64_t>();
    for (const json& e : o.at("arrays")) {
      Arr a = Arr::zeros(e.at("rows").get<int>(), e.at("cols").get<int>());
      read_array(dir, blob, e, offset, a);
      offset += uint64_t(a.size()) * sizeof(float);
      snap.state.push_back(std::move(a));
    }
    tr.restore_optimizer(snap);
  }

  tr.set_iteration(man.at("iteration").get<int>());
  tr.set_learning_rate(man.at("lr").get<double>());
}

}  // namespace keyloco::cli
