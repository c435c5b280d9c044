#include "psyn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "psyn/detail/dispatch.hpp"

namespace psyn {

using detail::dispatch;

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
  }
  void str(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  template <typename U>
  U le() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& path) const {
  for (const auto& [p, t] : records) {
    if (p == path) return &t;
  }
  return nullptr;
}

const Tensor& Checkpoint::get(const std::string& path) const {
  const Tensor* t = find(path);
  if (!t) throw CheckpointError("checkpoint has no record '" + path + "'");
  return *t;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes("PSYN", 4);
  w.le<std::uint32_t>(Checkpoint::kVersion);
  w.str(ckpt.header);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& [path, t] : ckpt.records) {
    w.str(path);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.le<std::int64_t>(d);
    dispatch(t.dtype(), [&]<typename T>() {
      using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      for (T v : t.data<T>()) w.le<Bits>(std::bit_cast<Bits>(v));
    });
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "PSYN", 4) != 0) {
    throw CheckpointError("not a checkpoint: bad magic");
  }
  Reader r(bytes);
  for (int i = 0; i < 4; ++i) r.le<std::uint8_t>();
  const auto version = r.le<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.header = r.str();
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string path = r.str();
    const auto code = r.le<std::uint8_t>();
    if (code > 1) throw CheckpointError("record '" + path + "': unknown dtype " + std::to_string(code));
    const auto rank = r.le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.le<std::int64_t>();
    Tensor t = Tensor::make(shape, static_cast<DType>(code));
    dispatch(t.dtype(), [&]<typename T>() {
      using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      for (T& v : t.data<T>()) v = std::bit_cast<T>(r.le<Bits>());
    });
    ckpt.records.emplace_back(std::move(path), std::move(t));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after last record");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + file.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + file.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void store_params(Checkpoint& ckpt, const std::string& prefix, const ParamSet& params) {
  for (const auto& path : params.paths()) {
    const std::string key = prefix.empty() ? path : prefix + "/" + path;
    const auto& st = params.state(path);
    ckpt.put(key, params.at(path).detach());
    ckpt.put(key + "#m", st.m.detach());
    ckpt.put(key + "#v", st.v.detach());
    ckpt.put(key + "#t", Tensor::scalar(static_cast<double>(st.step), DType::f64));
  }
}

void load_params(const Checkpoint& ckpt, const std::string& prefix, ParamSet& params) {
  for (const auto& path : params.paths()) {
    const std::string key = prefix.empty() ? path : prefix + "/" + path;
    Tensor& p = params.at(path);
    auto copy_into = [&](Tensor& dst, const Tensor& src, const std::string& name) {
      if (src.shape() != dst.shape() || src.dtype() != dst.dtype()) {
        throw CheckpointError("record '" + name + "' has " + shape_str(src.shape()) + " " +
                              dtype_name(src.dtype()) + ", expected " + shape_str(dst.shape()) +
                              " " + dtype_name(dst.dtype()));
      }
      dispatch(dst.dtype(), [&]<typename T>() {
        auto s = src.data<T>();
        std::copy(s.begin(), s.end(), dst.data<T>().begin());
      });
    };
    copy_into(p, ckpt.get(key), key);
    auto& st = params.state(path);
    copy_into(st.m, ckpt.get(key + "#m"), key + "#m");
    copy_into(st.v, ckpt.get(key + "#v"), key + "#v");
    st.step = static_cast<std::int64_t>(ckpt.get(key + "#t").item());
  }
}

}  // namespace psyn
