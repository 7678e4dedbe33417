#include <zlib.h>

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "advss/config.hpp"
#include "advss/trainer.hpp"

// Layout: "ADVSSCK\0", u32 version, u64 meta length, meta JSON, u32 tensor
// count, tensors, u32 crc32 of everything before it. A tensor is
// u32 name length, name, u8 dtype, u32 rank, i64 dims, u64 byte length, data.
// Integers are little-endian.

namespace advss {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'S', 'S', 'C', 'K', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void bytes(const void* data, std::size_t n) { buf_.append(static_cast<const char*>(data), n); }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw CheckpointError("checkpoint is truncated");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    return std::string(take(n), n);
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& buf_;
  std::size_t end_, pos_ = 0;
};

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw CheckpointError(std::string("unsupported tensor dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from(std::uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw CheckpointError("unknown tensor dtype code " + std::to_string(code));
  }
}

std::string shape_string(torch::IntArrayRef sizes) {
  std::ostringstream os;
  os << sizes;
  return os.str();
}

/// Every tensor that makes up the training state, keyed for the file.
std::vector<std::pair<std::string, torch::Tensor>> state_tensors(TrainState& state, bool create_missing) {
  auto out = state.model().named_state();
  std::map<const void*, std::string> names;
  for (const auto& [key, t] : out) names[t.unsafeGetTensorImpl()] = key;

  for (auto& [group, opt] : state.optimizers()) {
    for (auto& param_group : opt->param_groups()) {
      for (auto& p : param_group.params()) {
        void* id = p.unsafeGetTensorImpl();
        auto& slots = opt->state();
        auto it = slots.find(id);
        if (it == slots.end()) {
          if (!create_missing) continue;
          auto fresh = std::make_unique<torch::optim::AdamParamState>();
          fresh->exp_avg(torch::zeros_like(p, torch::MemoryFormat::Preserve));
          fresh->exp_avg_sq(torch::zeros_like(p, torch::MemoryFormat::Preserve));
          it = slots.emplace(id, std::move(fresh)).first;
        }
        auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
        const auto prefix = "optim/" + group + "/" + names.at(id) + "/";
        out.emplace_back(prefix + "exp_avg", s.exp_avg());
        out.emplace_back(prefix + "exp_avg_sq", s.exp_avg_sq());
        out.emplace_back(prefix + "step", torch::tensor(s.step(), torch::kInt64));
      }
    }
  }
  return out;
}

json history_json(const std::vector<MetricRecord>& history) {
  json a = json::array();
  for (const auto& r : history) a.push_back(json::parse(to_json_line(r)));
  return a;
}

struct Loaded {
  json meta;
  std::map<std::string, torch::Tensor> tensors;
};

Loaded read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError(path.string() + " is not a checkpoint file");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  const auto body = buf.size() - 4;
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(body));
  if (crc != stored_crc) throw CheckpointError(path.string() + " is corrupted (checksum mismatch)");

  Reader r(buf, body);
  r.take(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kVersion) + ")");
  Loaded out;
  const auto meta_len = r.get<std::uint64_t>();
  out.meta = json::parse(std::string(r.take(meta_len), meta_len));
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto dtype = dtype_from(r.get<std::uint8_t>());
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = r.get<std::int64_t>();
    const auto nbytes = r.get<std::uint64_t>();
    auto t = torch::empty(dims, dtype);
    if (nbytes != t.nbytes()) throw CheckpointError("tensor " + name + " has an inconsistent byte length");
    std::memcpy(t.data_ptr(), r.take(nbytes), nbytes);
    out.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
  return out;
}

}  // namespace

void save_checkpoint(TrainState& state, const std::filesystem::path& path) {
  json meta;
  meta["config"] = to_json(state.config());
  meta["iteration"] = state.iteration;
  meta["data_position"] = state.data_position;
  meta["rng"] = state.rng.state();
  meta["history"] = history_json(state.history);

  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  const auto meta_text = meta.dump();
  w.put<std::uint64_t>(meta_text.size());
  w.bytes(meta_text.data(), meta_text.size());
  const auto tensors = state_tensors(state, /*create_missing=*/false);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    auto t = tensor.detach().contiguous();
    w.str(name);
    w.put<std::uint8_t>(dtype_code(t.scalar_type()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.put<std::int64_t>(d);
    w.put<std::uint64_t>(t.nbytes());
    w.bytes(t.data_ptr(), t.nbytes());
  }
  auto& buf = w.buffer();
  const std::uint32_t crc =
      static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
  w.put<std::uint32_t>(crc);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out.flush()) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place: " + ec.message());
}

void load_checkpoint_into(const std::filesystem::path& path, TrainState& state) {
  auto file = read_file(path);
  TrainConfig stored;
  try {
    stored = train_config_from_json(file.meta.at("config"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config is unreadable: ") + e.what());
  }
  if (!(stored.arch == state.config().arch))
    throw CheckpointError("architecture mismatch: checkpoint has " + to_json(stored.arch).dump() +
                          ", state expects " + to_json(state.config().arch).dump());

  // A checkpoint holds moments for every parameter once any step has run.
  const bool has_moments = file.meta.at("iteration").get<std::int64_t>() > 0;
  auto live = state_tensors(state, has_moments);
  std::size_t expected = 0;
  for (const auto& [name, t] : live) {
    auto it = file.tensors.find(name);
    if (it == file.tensors.end()) throw CheckpointError("checkpoint is missing tensor " + name);
    if (it->second.sizes() != t.sizes())
      throw CheckpointError("shape mismatch for " + name + ": checkpoint " + shape_string(it->second.sizes()) +
                            ", expected " + shape_string(t.sizes()));
    ++expected;
  }
  if (expected != file.tensors.size())
    throw CheckpointError("checkpoint holds " + std::to_string(file.tensors.size()) + " tensors, expected " +
                          std::to_string(expected));

  torch::NoGradGuard no_grad;
  for (auto& [name, t] : live) {
    const auto& src = file.tensors.at(name);
    if (name.ends_with("/step")) continue;
    t.copy_(src);
  }
  // Steps are plain integers in the optimizer state, not tensors.
  if (has_moments) {
    std::map<const void*, std::string> names;
    for (const auto& [key, t] : state.model().named_state()) names[t.unsafeGetTensorImpl()] = key;
    for (auto& [group, opt] : state.optimizers())
      for (auto& [id, slot] : opt->state()) {
        auto& s = static_cast<torch::optim::AdamParamState&>(*slot);
        s.step(file.tensors.at("optim/" + group + "/" + names.at(id) + "/step").item<std::int64_t>());
      }
  }

  state.iteration = file.meta.at("iteration").get<std::int64_t>();
  state.data_position = file.meta.at("data_position").get<std::int64_t>();
  state.rng.restore(file.meta.at("rng").get<std::string>());
  state.history.clear();
  for (const auto& r : file.meta.at("history")) state.history.push_back(parse_metric_line(r.dump()));
}

std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& path) {
  auto file = read_file(path);
  TrainConfig config;
  try {
    config = train_config_from_json(file.meta.at("config"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config is unreadable: ") + e.what());
  }
  auto state = std::make_unique<TrainState>(config);
  load_checkpoint_into(path, *state);
  return state;
}

}  // namespace advss
