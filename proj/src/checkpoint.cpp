#include "getcap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "getcap/errors.hpp"

namespace getcap {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'G', 'E', 'T', 'C'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptionError("checkpoint: truncated data");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_params(const ParamList& params) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, kCheckpointVersion, 4);
  put_le(out, params.size(), 4);
  for (const auto& p : params) {
    put_le(out, p.name.size(), 4);
    out.insert(out.end(), p.name.begin(), p.name.end());
    const Shape& shape = p.tensor.shape();
    put_le(out, shape.size(), 4);
    for (std::size_t e : shape) put_le(out, e, 8);
    for (double v : p.tensor.data()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  return out;
}

std::vector<NamedTensor> parse_params(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic (expected GETC)");
  }
  Reader in(bytes.subspan(4));
  const auto version = in.le(4);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = in.le(4);
  std::vector<NamedTensor> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = in.str(static_cast<std::size_t>(in.le(4)));
    const auto rank = in.le(4);
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::size_t>(in.le(8)));
    const std::size_t n = shape_numel(shape);
    if (n > in.remaining() / 8) throw CorruptionError("checkpoint: truncated values for '" + t.name + "'");
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(in.le(8));
    t.tensor = Tensor(std::move(shape), std::move(values));
    out.push_back(std::move(t));
  }
  if (!in.done()) throw CorruptionError("checkpoint: trailing bytes");
  return out;
}

void save_checkpoint(const fs::path& path, const CaptionModel& model) {
  const auto bytes = serialize_params(model.parameters());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

void load_checkpoint(const fs::path& path, CaptionModel& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("checkpoint not found: " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const auto stored = parse_params(bytes);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : stored) by_name.emplace(t.name, &t.tensor);

  const ParamList params = model.parameters();
  if (stored.size() != params.size()) {
    throw ContractError("checkpoint " + path.string() + " holds " + std::to_string(stored.size()) +
                        " tensors, model has " + std::to_string(params.size()));
  }
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ContractError("checkpoint " + path.string() + " lacks '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw DimensionError("checkpoint tensor '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                           ", model expects " + shape_str(p.tensor.shape()));
    }
  }
  for (const auto& p : params) {
    Tensor dst = p.tensor;
    const auto src = by_name.at(p.name)->data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

}  // namespace getcap
