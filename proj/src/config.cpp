#include "alibi_lm/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace alibi_lm {

namespace {

// One value as written: a scalar token or a list of scalar tokens.
struct RawValue {
  bool is_list = false;
  std::vector<std::string> items;  // scalars with quotes removed
  std::vector<bool> quoted;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Strips a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_quotes = !in_quotes;
    if (line[i] == '#' && !in_quotes) return line.substr(0, i);
  }
  return line;
}

void parse_scalar(const std::string& key, int line, const std::string& text, RawValue& out) {
  const std::string t = trim(text);
  if (t.empty()) throw ConfigError(key, line, "empty value");
  if (t.front() == '"') {
    if (t.size() < 2 || t.back() != '"') throw ConfigError(key, line, "unterminated string");
    out.items.push_back(t.substr(1, t.size() - 2));
    out.quoted.push_back(true);
  } else {
    out.items.push_back(t);
    out.quoted.push_back(false);
  }
}

RawValue parse_raw(const std::string& key, int line, const std::string& text) {
  RawValue v;
  const std::string t = trim(text);
  if (!t.empty() && t.front() == '[') {
    if (t.back() != ']') throw ConfigError(key, line, "unterminated list");
    v.is_list = true;
    const std::string body = trim(std::string_view(t).substr(1, t.size() - 2));
    if (body.empty()) return v;
    std::string item;
    bool in_quotes = false;
    for (char c : body) {
      if (c == '"') in_quotes = !in_quotes;
      if (c == ',' && !in_quotes) {
        parse_scalar(key, line, item, v);
        item.clear();
      } else {
        item.push_back(c);
      }
    }
    parse_scalar(key, line, item, v);
    return v;
  }
  parse_scalar(key, line, t, v);
  return v;
}

template <typename T>
T to_number(const std::string& key, int line, const std::string& text, bool quoted, const char* type) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (quoted || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(key, line, std::string("expected ") + type + ", got '" + text + "'");
  }
  return value;
}

const std::string& scalar_of(const std::string& key, int line, const RawValue& v) {
  if (v.is_list) throw ConfigError(key, line, "expected a single value, got a list");
  return v.items.front();
}

int as_int(const std::string& key, int line, const RawValue& v) {
  return to_number<int>(key, line, scalar_of(key, line, v), v.quoted.front(), "an integer");
}

std::size_t as_size(const std::string& key, int line, const RawValue& v) {
  return to_number<std::size_t>(key, line, scalar_of(key, line, v), v.quoted.front(), "a non-negative integer");
}

std::uint64_t as_u64(const std::string& key, int line, const RawValue& v) {
  return to_number<std::uint64_t>(key, line, scalar_of(key, line, v), v.quoted.front(), "a non-negative integer");
}

double as_float(const std::string& key, int line, const RawValue& v) {
  return to_number<double>(key, line, scalar_of(key, line, v), v.quoted.front(), "a number");
}

bool as_bool(const std::string& key, int line, const RawValue& v) {
  const std::string& s = scalar_of(key, line, v);
  if (!v.quoted.front() && s == "true") return true;
  if (!v.quoted.front() && s == "false") return false;
  throw ConfigError(key, line, "expected true or false, got '" + s + "'");
}

std::string as_string(const std::string& key, int line, const RawValue& v) {
  const std::string& s = scalar_of(key, line, v);
  if (!v.quoted.front()) {
    // A bare word must not look like a number or a boolean.
    double d;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
    if ((ec == std::errc() && ptr == s.data() + s.size()) || s == "true" || s == "false") {
      throw ConfigError(key, line, "expected a string, got '" + s + "'");
    }
  }
  return s;
}

std::vector<std::string> list_items(const std::string& key, int line, const RawValue& v) {
  if (!v.is_list) throw ConfigError(key, line, "expected a [list]");
  return v.items;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

template <typename T, typename F>
std::string list_text(const std::vector<T>& items, F&& render) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + render(items[i]);
  return out + "]";
}

struct KeySpec {
  ConfigKey doc;
  std::function<void(RunConfig&, const std::string&, int, const RawValue&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_KEY(name, field, def, desc)                                                             \
  KeySpec{{name, def, desc},                                                                        \
          [](RunConfig& c, const std::string& k, int l, const RawValue& v) { c.field = as_int(k, l, v); }, \
          [](const RunConfig& c) { return std::to_string(c.field); }}
#define FLOAT_KEY(name, field, def, desc)                                                               \
  KeySpec{{name, def, desc},                                                                            \
          [](RunConfig& c, const std::string& k, int l, const RawValue& v) { c.field = as_float(k, l, v); }, \
          [](const RunConfig& c) { return format_double(c.field); }}

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      INT_KEY("d_model", d_model, "64", "model width"),
      INT_KEY("n_heads", n_heads, "4", "attention heads per layer"),
      INT_KEY("n_layers", n_layers, "2", "transformer layers"),
      INT_KEY("d_ffn", d_ffn, "256", "feed-forward inner width"),
      KeySpec{{"position_method", "\"alibi\"", "none | sinusoidal | rotary | t5 | alibi"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) {
                c.position_method = as_string(k, l, v);
                try {
                  parse_method(c.position_method);
                } catch (const ArgumentError& e) {
                  throw ConfigError(k, l, e.what());
                }
              },
              [](const RunConfig& c) { return quote(c.position_method); }},
      FLOAT_KEY("rotary_base", rotary_base, "10000", "rotary wavelength base"),
      INT_KEY("t5_num_buckets", t5.num_buckets, "32", "T5 distance buckets"),
      INT_KEY("t5_max_distance", t5.max_distance, "128", "distance mapped to the last T5 bucket"),
      KeySpec{{"t5_shared", "true", "one T5 table for all layers (false: one per layer)"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) { c.t5.shared = as_bool(k, l, v); },
              [](const RunConfig& c) { return std::string(c.t5.shared ? "true" : "false"); }},
      FLOAT_KEY("dropout", dropout, "0", "dropout probability in [0, 1)"),
      KeySpec{{"seed", "1", "master seed for init, batching and dropout (env ALIBI_LM_SEED overrides)"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) { c.train.seed = as_u64(k, l, v); },
              [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      INT_KEY("seq_len", train.L, "64", "training subsequence length L"),
      INT_KEY("batch_size", train.batch_size, "32", "subsequences per optimizer step"),
      INT_KEY("steps", train.steps, "2000", "optimizer steps"),
      FLOAT_KEY("lr_peak", train.lr_peak, "0.0003", "learning rate after warmup"),
      INT_KEY("warmup_steps", train.warmup_steps, "100", "linear warmup steps"),
      KeySpec{{"schedule", "\"inverse_sqrt\"", "inverse_sqrt | cosine | constant"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) {
                try {
                  c.train.schedule = parse_schedule(as_string(k, l, v));
                } catch (const ArgumentError& e) {
                  throw ConfigError(k, l, e.what());
                }
              },
              [](const RunConfig& c) { return quote(schedule_name(c.train.schedule)); }},
      FLOAT_KEY("adam_beta1", train.beta1, "0.9", "Adam first-moment decay"),
      FLOAT_KEY("adam_beta2", train.beta2, "0.98", "Adam second-moment decay"),
      FLOAT_KEY("adam_eps", train.eps, "1e-08", "Adam epsilon"),
      FLOAT_KEY("grad_clip", train.grad_clip, "1", "global gradient-norm clip (<= 0 disables)"),
      INT_KEY("eval_every", train.eval_every, "500", "validation interval in steps (0 disables)"),
      KeySpec{{"eval_tokens", "16384", "validation tokens scored during training (0 = all)"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) { c.train.eval_tokens = as_size(k, l, v); },
              [](const RunConfig& c) { return std::to_string(c.train.eval_tokens); }},
      KeySpec{{"corpus", "\"data/sotu.txt\"", "text file read as raw bytes"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) { c.corpus = as_string(k, l, v); },
              [](const RunConfig& c) { return quote(c.corpus.string()); }},
      KeySpec{{"split", "[0.9, 0.05, 0.05]", "train/valid/test fractions"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) {
                const auto items = list_items(k, l, v);
                if (items.size() != 3) throw ConfigError(k, l, "expected three fractions");
                for (std::size_t i = 0; i < 3; ++i) {
                  c.split[i] = to_number<double>(k, l, items[i], v.quoted[i], "a number");
                }
              },
              [](const RunConfig& c) {
                return list_text(std::vector<double>(c.split.begin(), c.split.end()),
                                 [](double d) { return format_double(d); });
              }},
      KeySpec{{"eval_lengths", "[64, 128, 256]", "ascending L_valid values for eval/sweep/compare"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) {
                const auto items = list_items(k, l, v);
                c.eval_lengths.clear();
                for (std::size_t i = 0; i < items.size(); ++i) {
                  c.eval_lengths.push_back(to_number<int>(k, l, items[i], v.quoted[i], "an integer"));
                }
              },
              [](const RunConfig& c) { return list_text(c.eval_lengths, [](int i) { return std::to_string(i); }); }},
      KeySpec{{"eval_mode", "\"nonoverlapping\"", "nonoverlapping | sliding"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) {
                try {
                  c.eval_mode = parse_mode(as_string(k, l, v));
                } catch (const ArgumentError& e) {
                  throw ConfigError(k, l, e.what());
                }
              },
              [](const RunConfig& c) { return quote(mode_name(c.eval_mode)); }},
      INT_KEY("eval_stride", eval_stride, "1", "sliding-window stride S"),
      KeySpec{{"eval_split", "\"valid\"", "train | valid | test | all"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) {
                c.eval_split = as_string(k, l, v);
                if (c.eval_split != "train" && c.eval_split != "valid" && c.eval_split != "test" && c.eval_split != "all") {
                  throw ConfigError(k, l, "expected train|valid|test|all, got '" + c.eval_split + "'");
                }
              },
              [](const RunConfig& c) { return quote(c.eval_split); }},
      KeySpec{{"eval_max_tokens", "0", "cap on evaluated tokens (0 = whole split)"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) { c.eval_max_tokens = as_size(k, l, v); },
              [](const RunConfig& c) { return std::to_string(c.eval_max_tokens); }},
      KeySpec{{"compare_methods", "[\"sinusoidal\", \"alibi\"]", "position methods trained by `compare`"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) {
                c.compare_methods = list_items(k, l, v);
                for (const auto& m : c.compare_methods) {
                  try {
                    parse_method(m);
                  } catch (const ArgumentError& e) {
                    throw ConfigError(k, l, e.what());
                  }
                }
              },
              [](const RunConfig& c) { return list_text(c.compare_methods, quote); }},
      KeySpec{{"record_timing", "true", "write wall-clock seconds into CSVs (false: 0, for byte-identical reruns)"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) { c.record_timing = as_bool(k, l, v); },
              [](const RunConfig& c) { return std::string(c.record_timing ? "true" : "false"); }},
      KeySpec{{"out_dir", "\"runs/default\"", "directory receiving all artifacts"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) { c.out_dir = as_string(k, l, v); },
              [](const RunConfig& c) { return quote(c.out_dir.string()); }},
      KeySpec{{"checkpoint", "\"\"", "checkpoint for eval/sweep (empty: <out_dir>/model.ckpt)"},
              [](RunConfig& c, const std::string& k, int l, const RawValue& v) {
                c.checkpoint = v.quoted.front() && !v.is_list ? v.items.front() : as_string(k, l, v);
              },
              [](const RunConfig& c) { return quote(c.checkpoint.string()); }},
  };
  return specs;
}

#undef INT_KEY
#undef FLOAT_KEY

void validate_with_lines(const RunConfig& c, const std::map<std::string, int>& lines) {
  auto fail = [&](const std::string& key, const std::string& message) {
    const auto it = lines.find(key);
    throw ConfigError(key, it == lines.end() ? 0 : it->second, message);
  };
  auto positive = [&](const std::string& key, long long value) {
    if (value < 1) fail(key, "must be >= 1, got " + std::to_string(value));
  };
  positive("d_model", c.d_model);
  positive("n_heads", c.n_heads);
  positive("n_layers", c.n_layers);
  positive("d_ffn", c.d_ffn);
  if (c.d_model % c.n_heads != 0) {
    fail("n_heads", "d_model " + std::to_string(c.d_model) + " is not divisible by n_heads " + std::to_string(c.n_heads));
  }
  auto method_checks = [&](const std::string& method, const std::string& key) {
    if (method == "rotary" && (c.d_model / c.n_heads) % 2 != 0) fail(key, "rotary needs an even d_model / n_heads");
    if (method == "sinusoidal" && c.d_model % 2 != 0) fail(key, "sinusoidal needs an even d_model");
  };
  method_checks(c.position_method, "position_method");
  for (const auto& m : c.compare_methods) method_checks(m, "compare_methods");
  if (!(c.rotary_base > 1.0)) fail("rotary_base", "must be > 1");
  if (c.t5.num_buckets < 2) fail("t5_num_buckets", "must be >= 2");
  if (c.t5.max_distance <= c.t5.num_buckets / 2) fail("t5_max_distance", "must exceed t5_num_buckets / 2");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) fail("dropout", "must be in [0, 1)");
  positive("seq_len", c.train.L);
  positive("batch_size", c.train.batch_size);
  if (c.train.steps < 0) fail("steps", "must be >= 0");
  if (!(c.train.lr_peak > 0.0)) fail("lr_peak", "must be > 0");
  if (c.train.warmup_steps < 0 || c.train.warmup_steps > c.train.steps) fail("warmup_steps", "must be in [0, steps]");
  if (!(c.train.beta1 >= 0.0 && c.train.beta1 < 1.0)) fail("adam_beta1", "must be in [0, 1)");
  if (!(c.train.beta2 >= 0.0 && c.train.beta2 < 1.0)) fail("adam_beta2", "must be in [0, 1)");
  if (!(c.train.eps > 0.0)) fail("adam_eps", "must be > 0");
  if (c.train.eval_every < 0) fail("eval_every", "must be >= 0");
  for (double f : c.split) {
    if (!(f > 0.0)) fail("split", "fractions must be positive");
  }
  if (std::abs(c.split[0] + c.split[1] + c.split[2] - 1.0) > 1e-9) fail("split", "fractions must sum to 1");
  if (c.eval_lengths.empty()) fail("eval_lengths", "must not be empty");
  for (std::size_t i = 0; i < c.eval_lengths.size(); ++i) {
    if (c.eval_lengths[i] < 2) fail("eval_lengths", "every length must be >= 2");
    if (i > 0 && c.eval_lengths[i] <= c.eval_lengths[i - 1]) fail("eval_lengths", "must be strictly ascending");
  }
  if (c.eval_stride < 1) fail("eval_stride", "must be >= 1");
  if (c.eval_mode == EvalMode::sliding && c.eval_stride > c.eval_lengths.front()) {
    fail("eval_stride", "must not exceed the smallest eval length");
  }
  if (c.compare_methods.empty()) fail("compare_methods", "must not be empty");
}

}  // namespace

ModelConfig RunConfig::model_config_for(const std::string& method) const {
  ModelConfig m;
  m.d_model = d_model;
  m.n_heads = n_heads;
  m.n_layers = n_layers;
  m.d_ffn = d_ffn;
  m.dropout = dropout;
  m.seed = train.seed;
  m.position = parse_method(method);
  if (auto* r = std::get_if<Rotary>(&m.position)) r->base = rotary_base;
  if (auto* t = std::get_if<T5Bias>(&m.position)) *t = t5;
  return m;
}

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? out_dir / "model.ckpt" : checkpoint;
}

RunConfig parse_config(const std::string& text) {
  std::map<std::string, const KeySpec*> by_name;
  for (const KeySpec& spec : key_specs()) by_name[spec.doc.name] = &spec;

  RunConfig config;
  std::map<std::string, int> lines;
  std::istringstream in(text);
  std::string raw_line;
  int line_no = 0;
  while (std::getline(in, raw_line)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw_line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line, line_no, "expected `key = value`");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const auto it = by_name.find(key);
    if (it == by_name.end()) throw ConfigError(key, line_no, "unknown key");
    if (lines.count(key)) throw ConfigError(key, line_no, "duplicate key (first set on line " + std::to_string(lines[key]) + ")");
    lines[key] = line_no;
    it->second->set(config, key, line_no, parse_raw(key, line_no, line.substr(eq + 1)));
  }
  validate_with_lines(config, lines);
  if (!std::filesystem::exists(config.corpus)) {
    config.warnings.push_back("corpus '" + config.corpus.string() + "' does not exist");
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const KeySpec& spec : key_specs()) out += std::string(spec.doc.name) + " = " + spec.get(config) + "\n";
  return out;
}

void validate_config(const RunConfig& config) { validate_with_lines(config, {}); }

const std::vector<ConfigKey>& config_reference() {
  static const std::vector<ConfigKey> docs = [] {
    std::vector<ConfigKey> out;
    for (const KeySpec& spec : key_specs()) out.push_back(spec.doc);
    return out;
  }();
  return docs;
}

}  // namespace alibi_lm
