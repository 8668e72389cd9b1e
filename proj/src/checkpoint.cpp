#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "alibi_lm/eval.hpp"
#include "alibi_lm/train.hpp"

namespace alibi_lm {

namespace {

constexpr char kMagic[8] = {'A', 'L', 'I', 'B', 'I', 'L', 'M', '\0'};
constexpr std::size_t kMaxHeader = 1 << 16;

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CheckpointError("checkpoint truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return value;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw CheckpointError("bad value '" + text + "' for '" + key + "' in checkpoint header");
  }
  return value;
}

}  // namespace

std::string serialize_model_config(const ModelConfig& c) {
  std::ostringstream out;
  out << "vocab_size=" << c.vocab_size << '\n'
      << "d_model=" << c.d_model << '\n'
      << "n_heads=" << c.n_heads << '\n'
      << "n_layers=" << c.n_layers << '\n'
      << "d_ffn=" << c.d_ffn << '\n'
      << "position_method=" << method_name(c.position) << '\n';
  if (const auto* r = std::get_if<Rotary>(&c.position)) out << "rotary_base=" << format_double(r->base) << '\n';
  if (const auto* t = std::get_if<T5Bias>(&c.position)) {
    out << "t5_num_buckets=" << t->num_buckets << '\n'
        << "t5_max_distance=" << t->max_distance << '\n'
        << "t5_shared=" << (t->shared ? 1 : 0) << '\n';
  }
  out << "dropout=" << format_double(c.dropout) << '\n' << "seed=" << c.seed << '\n';
  return out.str();
}

ModelConfig parse_model_config(const std::string& text) {
  std::map<std::string, std::string> fields;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed checkpoint header line '" + line + "'");
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    auto it = fields.find(key);
    if (it == fields.end()) throw CheckpointError("checkpoint header lacks '" + key + "'");
    std::string value = it->second;
    fields.erase(it);
    return value;
  };
  ModelConfig c;
  c.vocab_size = parse_number<int>("vocab_size", take("vocab_size"));
  c.d_model = parse_number<int>("d_model", take("d_model"));
  c.n_heads = parse_number<int>("n_heads", take("n_heads"));
  c.n_layers = parse_number<int>("n_layers", take("n_layers"));
  c.d_ffn = parse_number<int>("d_ffn", take("d_ffn"));
  try {
    c.position = parse_method(take("position_method"));
  } catch (const ArgumentError& e) {
    throw CheckpointError(e.what());
  }
  if (auto* r = std::get_if<Rotary>(&c.position)) r->base = parse_number<double>("rotary_base", take("rotary_base"));
  if (auto* t = std::get_if<T5Bias>(&c.position)) {
    t->num_buckets = parse_number<int>("t5_num_buckets", take("t5_num_buckets"));
    t->max_distance = parse_number<int>("t5_max_distance", take("t5_max_distance"));
    t->shared = parse_number<int>("t5_shared", take("t5_shared")) != 0;
  }
  c.dropout = parse_number<double>("dropout", take("dropout"));
  c.seed = parse_number<std::uint64_t>("seed", take("seed"));
  if (!fields.empty()) throw CheckpointError("unexpected checkpoint header key '" + fields.begin()->first + "'");
  return c;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const std::string header = serialize_model_config(model.config());
  std::string blob(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(blob, kCheckpointVersion);
  put_le<std::uint32_t>(blob, static_cast<std::uint32_t>(header.size()));
  blob += header;
  put_le<std::uint64_t>(blob, model.param_count());
  blob.reserve(blob.size() + 8 * model.param_count());
  for (const auto& p : model.parameters()) {
    for (double v : p.tensor.data()) put_le<std::uint64_t>(blob, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < sizeof kMagic || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  std::size_t pos = sizeof kMagic;
  const auto version = get_le<std::uint32_t>(blob, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = get_le<std::uint32_t>(blob, pos);
  if (header_len > kMaxHeader || pos + header_len > blob.size()) throw CheckpointError("checkpoint header corrupt");
  const ModelConfig config = parse_model_config(blob.substr(pos, header_len));
  pos += header_len;
  Model model = [&] {
    try {
      return Model(config);
    } catch (const ArgumentError& e) {
      throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
    }
  }();
  const auto count = get_le<std::uint64_t>(blob, pos);
  if (count != model.param_count()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " parameters, config implies " +
                          std::to_string(model.param_count()));
  }
  if (blob.size() != pos + 8 * count) throw CheckpointError("checkpoint size does not match its parameter count");
  for (const auto& p : model.parameters()) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v = std::bit_cast<double>(get_le<std::uint64_t>(blob, pos));
  }
  return model;
}

Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Model model = load_checkpoint(path);
  if (!(model.config() == expected)) {
    std::istringstream stored(serialize_model_config(model.config())), wanted(serialize_model_config(expected));
    std::map<std::string, std::string> a, b;
    for (std::string line; std::getline(stored, line);) a[line.substr(0, line.find('='))] = line.substr(line.find('=') + 1);
    for (std::string line; std::getline(wanted, line);) b[line.substr(0, line.find('='))] = line.substr(line.find('=') + 1);
    std::string diff;
    for (const auto& [key, value] : b) {
      if (key == "seed" || a[key] == value) continue;
      diff += (diff.empty() ? "" : ", ") + key + " " + (a[key].empty() ? "<unset>" : a[key]) + " != " + value;
    }
    throw ConfigMismatchError("checkpoint '" + path.string() + "' does not match the expected config: " + diff);
  }
  return model;
}

}  // namespace alibi_lm
