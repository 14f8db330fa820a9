#pragma once

#include "liediff/data.hpp"
#include "liediff/metrics.hpp"
#include "liediff/model.hpp"
#include "liediff/verify.hpp"

#include <nlohmann/json.hpp>
#include <sodium.h>

#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <map>

namespace liediff {

using json = nlohmann::json;

// ---------------------------------------------------------------- base64 float arrays

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

inline std::string encode_doubles(const double* data, std::size_t n) {
  const std::size_t bytes = n * sizeof(double);
  std::string out(sodium_base64_ENCODED_LEN(bytes, sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), reinterpret_cast<const unsigned char*>(data), bytes,
                    sodium_base64_VARIANT_ORIGINAL);
  out.resize(std::strlen(out.c_str()));
  return out;
}

inline std::string encode_doubles(const std::vector<double>& v) { return encode_doubles(v.data(), v.size()); }
inline std::string encode_doubles(const Vec& v) { return encode_doubles(v.data(), static_cast<std::size_t>(v.size())); }

inline std::vector<double> decode_doubles(const std::string& text, const std::string& what) {
  std::vector<unsigned char> buf(text.size());
  std::size_t len = 0;
  const char* end = nullptr;
  const int rc = sodium_base642bin(buf.data(), buf.size(), text.data(), text.size(), nullptr, &len, &end,
                                   sodium_base64_VARIANT_ORIGINAL);
  require(rc == 0 && end == text.data() + text.size(), ErrorKind::SchemaError, what + ": invalid base64");
  require(len % sizeof(double) == 0, ErrorKind::SchemaError, what + ": byte count is not a multiple of 8");
  std::vector<double> out(len / sizeof(double));
  std::memcpy(out.data(), buf.data(), len);
  return out;
}

// ---------------------------------------------------------------- key/value config

// flat view: "section.key" -> value
using KeyValues = std::map<std::string, std::string>;

struct ConfigKey {
  std::string name, fallback, help;
};

// every recognised key; an empty fallback for seed means it must be supplied
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"seed", "", "master seed (required)"},
      {"output_dir", "out", "directory for artifacts"},
      {"group.id", "SO2Dilation", "TranslationN | SO2Dilation | SO3Dilation | SO4Dilation | SONDilation | GlobalSE3"},
      {"group.n", "2", "dimension for TranslationN / SONDilation, point count for GlobalSE3"},
      {"schedule.kind", "cosine", "cosine | linear"},
      {"schedule.T", "100", "diffusion steps"},
      {"dataset.name", "mog2d", "synthetic dataset"},
      {"dataset.n", "20000", "training set size"},
      {"dataset.path", "", "CSV file used instead of a synthetic dataset"},
      {"train.loss", "score_matching", "score_matching | flow_matching"},
      {"train.steps", "20000", "optimizer steps"},
      {"train.batch", "256", "batch size"},
      {"train.lr", "0.001", "Adam learning rate"},
      {"train.sigma_weighted", "true", "weight each term by sigma_t^2"},
      {"net.width", "128", "hidden width"},
      {"net.layers", "3", "hidden layers"},
      {"net.time_dim", "32", "sinusoidal time features"},
      {"net.activation", "silu", "silu | tanh"},
      {"net.sigma_scaled", "true", "divide the head by sigma_t"},
      {"sample.n", "2048", "samples drawn by sample and eval"},
      {"sample.update", "linearized", "linearized | exponential"},
      {"sample.ode_steps", "500", "Heun steps for flow-matching checkpoints"},
      {"bridge.T", "100", "bridge steps"},
      {"bridge.variance", "6", "terminal variance of the bridge noise"},
      {"bridge.active", "0,1", "comma-separated 0/1 generator mask; empty for all"},
  };
  return keys;
}

inline bool is_config_key(const std::string& k) {
  const auto& keys = config_keys();
  return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey& c) { return c.name == k; });
}

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}
}  // namespace detail

// "key = value" lines, "[section]" headers (nested with dots), '#' comments
inline KeyValues parse_config_text(const std::string& text, const std::string& source = "<memory>") {
  KeyValues out;
  std::istringstream in(text);
  std::string line, section;
  for (int no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(no);
    if (line.front() == '[') {
      require(line.back() == ']', ErrorKind::SchemaError, where + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::SchemaError, where + ": expected key = value");
    const std::string key = (section.empty() ? "" : section + ".") + detail::trim(line.substr(0, eq));
    require(is_config_key(key), ErrorKind::SchemaError, where + ": unknown key '" + key + "'");
    out[key] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

inline KeyValues load_config(const std::filesystem::path& path) {
  return parse_config_text(read_text(path), path.string());
}

// defaults, then file, then flags
inline KeyValues resolve_config(const KeyValues& file, const KeyValues& flags) {
  KeyValues out;
  for (const auto& k : config_keys()) out[k.name] = k.fallback;
  for (const auto* layer : {&file, &flags})
    for (const auto& [k, v] : *layer) {
      require(is_config_key(k), ErrorKind::SchemaError, "unknown key '" + k + "'");
      out[k] = v;
    }
  return out;
}

struct RunConfig {
  KeyValues echo;  // fully resolved keys
  Seed seed;
  std::filesystem::path output_dir;
  GroupId group = GroupId::SO2Dilation;
  GroupParams group_params;
  ScheduleKind schedule = ScheduleKind::cosine;
  int T = 100;
  DatasetSpec dataset;
  std::filesystem::path dataset_path;
  TrainConfig train;
  NetConfig net;
  std::size_t sample_n = 2048;
  ReverseUpdate update = ReverseUpdate::linearized;
  int ode_steps = 500;
  int bridge_T = 100;
  double bridge_variance = 6.0;
  std::optional<Vec> bridge_active;

  GroupAction make_group() const { return liediff::make_group(group, group_params); }
};

namespace detail {

template <class T>
T parse_number(const KeyValues& kv, const std::string& key) {
  const std::string& s = kv.at(key);
  T value{};
  std::size_t used = 0;
  try {
    if constexpr (std::is_floating_point_v<T>) value = static_cast<T>(std::stod(s, &used));
    else if constexpr (std::is_unsigned_v<T>) {
      require(!s.empty() && s[0] != '-', ErrorKind::InvalidParams, key + " must be non-negative");
      value = static_cast<T>(std::stoull(s, &used));
    } else value = static_cast<T>(std::stoll(s, &used));
  } catch (const std::logic_error&) {
    used = 0;
  }
  require(used == s.size() && !s.empty(), ErrorKind::InvalidParams, key + ": cannot parse '" + s + "'");
  return value;
}

inline bool parse_bool(const KeyValues& kv, const std::string& key) {
  const std::string& s = kv.at(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail(ErrorKind::InvalidParams, key + ": expected true or false, got '" + s + "'");
}

template <class E>
E parse_enum(const KeyValues& kv, const std::string& key, std::optional<E> (*parse)(const std::string&)) {
  const auto v = parse(kv.at(key));
  require(v.has_value(), ErrorKind::InvalidParams, key + ": unknown value '" + kv.at(key) + "'");
  return *v;
}

inline std::optional<ReverseUpdate> parse_update(const std::string& s) {
  if (s == "linearized") return ReverseUpdate::linearized;
  if (s == "exponential") return ReverseUpdate::exponential;
  return std::nullopt;
}

inline std::optional<LossKind> parse_loss(const std::string& s) {
  if (s == "score_matching") return LossKind::score_matching;
  if (s == "flow_matching") return LossKind::flow_matching;
  return std::nullopt;
}

inline std::optional<Vec> parse_mask(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::vector<double> v;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    require(item == "0" || item == "1", ErrorKind::InvalidParams, "bridge.active entries must be 0 or 1");
    v.push_back(item == "1" ? 1.0 : 0.0);
  }
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

// validates every key before any compute happens
inline RunConfig make_run_config(const KeyValues& resolved) {
  using namespace detail;
  RunConfig c;
  c.echo = resolved;
  require(!resolved.at("seed").empty(), ErrorKind::InvalidParams, "seed is required");
  c.seed = Seed{parse_number<std::uint64_t>(resolved, "seed")};
  c.output_dir = resolved.at("output_dir");
  c.group = parse_enum<GroupId>(resolved, "group.id", parse_group_id);
  c.group_params.n = parse_number<int>(resolved, "group.n");
  require(c.group != GroupId::Torsion && c.group != GroupId::BondAngle, ErrorKind::InvalidParams,
          "chain groups need a reference chain and are library-only");
  c.schedule = parse_enum<ScheduleKind>(resolved, "schedule.kind", parse_schedule_kind);
  c.T = parse_number<int>(resolved, "schedule.T");
  require(c.T >= 2, ErrorKind::InvalidParams, "schedule.T must be >= 2");

  const auto name = parse_enum<DatasetName>(resolved, "dataset.name", parse_dataset_name);
  c.dataset = default_spec(name, parse_number<std::size_t>(resolved, "dataset.n"), Seed{mix_seed(c.seed.value, 1)});
  require(c.dataset.n >= 1, ErrorKind::InvalidParams, "dataset.n must be >= 1");
  c.dataset_path = resolved.at("dataset.path");
  if (!c.dataset_path.empty())
    require(std::filesystem::exists(c.dataset_path), ErrorKind::IoError,
            "dataset.path " + c.dataset_path.string() + " does not exist");

  c.train.loss_kind = parse_enum<LossKind>(resolved, "train.loss", parse_loss);
  c.train.steps = parse_number<int>(resolved, "train.steps");
  c.train.batch_size = parse_number<int>(resolved, "train.batch");
  c.train.learning_rate = parse_number<double>(resolved, "train.lr");
  c.train.sigma_weighted = parse_bool(resolved, "train.sigma_weighted");
  c.train.seed = Seed{mix_seed(c.seed.value, 2)};
  detail::check_config(c.train);

  c.net.hidden_width = parse_number<int>(resolved, "net.width");
  c.net.hidden_layers = parse_number<int>(resolved, "net.layers");
  c.net.time_dim = parse_number<int>(resolved, "net.time_dim");
  c.net.activation = parse_enum<Activation>(resolved, "net.activation", parse_activation);
  c.net.sigma_scaled = parse_bool(resolved, "net.sigma_scaled");
  require(c.net.hidden_width >= 1 && c.net.hidden_layers >= 1 && c.net.time_dim >= 2 && c.net.time_dim % 2 == 0,
          ErrorKind::InvalidParams, "net sizes must be positive with an even time_dim");

  c.sample_n = parse_number<std::size_t>(resolved, "sample.n");
  c.update = parse_enum<ReverseUpdate>(resolved, "sample.update", parse_update);
  c.ode_steps = parse_number<int>(resolved, "sample.ode_steps");
  require(c.ode_steps >= 1, ErrorKind::InvalidParams, "sample.ode_steps must be >= 1");
  c.bridge_T = parse_number<int>(resolved, "bridge.T");
  c.bridge_variance = parse_number<double>(resolved, "bridge.variance");
  c.bridge_active = parse_mask(resolved.at("bridge.active"));

  // group construction validates its own parameters
  const auto g = c.make_group();
  if (c.dataset_path.empty() && name != DatasetName::bridge_pair)
    require(dataset_dim(name) == g.dim_x(), ErrorKind::InvalidParams,
            std::string("dataset ") + to_string(name) + " has dimension " + std::to_string(dataset_dim(name)) +
                " but " + g.name() + " acts on dimension " + std::to_string(g.dim_x()));
  return c;
}

inline json config_json(const KeyValues& kv) {
  json j = json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j;
}

inline KeyValues config_from_json(const json& j) {
  KeyValues kv;
  for (const auto& [k, v] : j.items()) kv[k] = v.get<std::string>();
  return kv;
}

// ---------------------------------------------------------------- checkpoint

inline constexpr int kCheckpointVersion = 1;

enum class ModelKind { score, flow_matching, bridge };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::score: return "score";
    case ModelKind::flow_matching: return "flow_matching";
    case ModelKind::bridge: return "bridge";
  }
  return "score";
}

inline std::optional<ModelKind> parse_model_kind(const std::string& s) {
  if (s == "score") return ModelKind::score;
  if (s == "flow_matching") return ModelKind::flow_matching;
  if (s == "bridge") return ModelKind::bridge;
  return std::nullopt;
}

struct Checkpoint {
  int format_version = kCheckpointVersion;
  ModelKind kind = ModelKind::score;
  KeyValues config;
  std::uint64_t seed = 0;
  std::string schedule_kind;  // cosine, linear or bridge
  int T = 0;
  std::map<std::string, std::vector<double>> schedule_arrays;
  int dim_in = 0, dim_out = 0;
  NetConfig net;
  std::vector<int> layer_sizes;
  Vec parameters;
  long train_steps = 0;

  NoiseSchedule noise_schedule() const {
    NoiseSchedule s;
    s.kind = *parse_schedule_kind(schedule_kind);
    s.T = T;
    s.beta = schedule_arrays.at("beta");
    s.alpha_bar = schedule_arrays.at("alpha_bar");
    s.sigma = schedule_arrays.at("sigma");
    return s;
  }
  BridgeSchedule bridge_schedule() const {
    BridgeSchedule b;
    b.T = T;
    b.beta = schedule_arrays.at("beta");
    b.cumvar = schedule_arrays.at("cumvar");
    return b;
  }
  ScoreNetwork network() const {
    Rng rng(Seed{0});
    ScoreNetwork n(dim_in, dim_out, net, rng);
    require(n.layer_sizes() == layer_sizes, ErrorKind::SchemaError, "checkpoint layer sizes disagree with net config");
    n.set_parameters(parameters);
    return n;
  }
};

inline void set_schedule(Checkpoint& c, const NoiseSchedule& s) {
  c.schedule_kind = to_string(s.kind);
  c.T = s.T;
  c.schedule_arrays = {{"beta", s.beta}, {"alpha_bar", s.alpha_bar}, {"sigma", s.sigma}};
}

inline void set_schedule(Checkpoint& c, const BridgeSchedule& b) {
  c.schedule_kind = "bridge";
  c.T = b.T;
  c.schedule_arrays = {{"beta", b.beta}, {"cumvar", b.cumvar}};
}

inline void set_network(Checkpoint& c, const ScoreNetwork& n) {
  c.dim_in = n.dim_in();
  c.dim_out = n.dim_out();
  c.net = n.config();
  c.layer_sizes = n.layer_sizes();
  c.parameters = n.parameters();
}

inline json to_json(const Checkpoint& c) {
  json sched = {{"kind", c.schedule_kind}, {"T", c.T}};
  for (const auto& [k, v] : c.schedule_arrays) sched[k] = encode_doubles(v);
  return {{"format_version", c.format_version},
          {"kind", to_string(c.kind)},
          {"config", config_json(c.config)},
          {"seed", c.seed},
          {"schedule", sched},
          {"network",
           {{"dim_in", c.dim_in},
            {"dim_out", c.dim_out},
            {"hidden_width", c.net.hidden_width},
            {"hidden_layers", c.net.hidden_layers},
            {"time_dim", c.net.time_dim},
            {"activation", to_string(c.net.activation)},
            {"zero_head", c.net.zero_head},
            {"sigma_scaled", c.net.sigma_scaled},
            {"layer_sizes", c.layer_sizes},
            {"parameters", encode_doubles(c.parameters)}}},
          {"train_steps", c.train_steps}};
}

inline Checkpoint checkpoint_from_json(const json& j, const std::string& source) {
  Checkpoint c;
  try {
    c.format_version = j.at("format_version").get<int>();
    require(c.format_version == kCheckpointVersion, ErrorKind::VersionMismatch,
            source + ": checkpoint format_version " + std::to_string(c.format_version) + ", expected " +
                std::to_string(kCheckpointVersion));
    const auto kind = parse_model_kind(j.at("kind").get<std::string>());
    require(kind.has_value(), ErrorKind::SchemaError, source + ": unknown model kind");
    c.kind = *kind;
    c.config = config_from_json(j.at("config"));
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& s = j.at("schedule");
    c.schedule_kind = s.at("kind").get<std::string>();
    c.T = s.at("T").get<int>();
    for (const auto& [k, v] : s.items())
      if (k != "kind" && k != "T") c.schedule_arrays[k] = decode_doubles(v.get<std::string>(), source + ": " + k);
    for (const auto& [k, v] : c.schedule_arrays)
      require(v.size() == static_cast<std::size_t>(c.T), ErrorKind::SchemaError, source + ": " + k + " length != T");
    const auto& n = j.at("network");
    c.dim_in = n.at("dim_in").get<int>();
    c.dim_out = n.at("dim_out").get<int>();
    c.net.hidden_width = n.at("hidden_width").get<int>();
    c.net.hidden_layers = n.at("hidden_layers").get<int>();
    c.net.time_dim = n.at("time_dim").get<int>();
    const auto act = parse_activation(n.at("activation").get<std::string>());
    require(act.has_value(), ErrorKind::SchemaError, source + ": unknown activation");
    c.net.activation = *act;
    c.net.zero_head = n.at("zero_head").get<bool>();
    c.net.sigma_scaled = n.at("sigma_scaled").get<bool>();
    c.layer_sizes = n.at("layer_sizes").get<std::vector<int>>();
    const auto p = decode_doubles(n.at("parameters").get<std::string>(), source + ": parameters");
    c.parameters = Eigen::Map<const Vec>(p.data(), static_cast<Eigen::Index>(p.size()));
    c.train_steps = j.at("train_steps").get<long>();
  } catch (const json::exception& e) {
    fail(ErrorKind::SchemaError, source + ": " + e.what());
  }
  return c;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_text_atomic(path, dump(to_json(c)));
}

inline json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::SchemaError, source + ": " + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(parse_json(read_text(path), path.string()), path.string());
}

// ---------------------------------------------------------------- reports

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// sidecar written next to every CSV artifact; the timestamp is its only non-reproducible field
inline json metadata(const std::string& artifact, const KeyValues& config, Seed seed, json extra = json::object()) {
  extra["artifact"] = artifact;
  extra["config"] = config_json(config);
  extra["seed"] = seed.value;
  extra["created_utc"] = utc_timestamp();
  return extra;
}

inline json to_json(const TrainReport& r) {
  return {{"losses", r.losses},
          {"final_loss", r.final_loss},
          {"wall_seconds", r.wall_seconds},
          {"seed", r.seed.value},
          {"loss_kind", to_string(r.loss_kind)}};
}

inline json to_json(const W2Result& r) {
  return {{"raw_w2", r.raw_w2},
          {"normalized_w2", r.normalized_w2},
          {"n_samples", r.n_samples},
          {"method", to_string(r.method)}};
}

inline json to_json(const CheckRecord& r) {
  json j = {{"check_id", r.check_id},     {"group_id", r.group_id}, {"n_points", r.n_points},
            {"max_error", r.max_error},   {"passed", r.passed},     {"expect_failure", r.expect_failure},
            {"detail", r.detail}};
  j["tolerance"] = std::isfinite(r.tolerance) ? json(r.tolerance) : json(nullptr);
  return j;
}

inline json to_json(const VerifyReport& r) {
  json recs = json::array();
  for (const auto& rec : r.records) recs.push_back(to_json(rec));
  return {{"records", recs}, {"seed", r.seed.value}, {"float_bits", r.float_bits}, {"all_ok", r.all_ok()}};
}

}  // namespace liediff
