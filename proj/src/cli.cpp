#include "slff/cli.hpp"

#include "CLI11.hpp"
#include "json.hpp"
#include "slff/dataproto.hpp"
#include "slff/eval.hpp"
#include "slff/interpret.hpp"
#include "slff/io.hpp"
#include "slff/theory_checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <limits>
#include <sstream>

namespace slff {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const ConfigKey* find_key(const std::string& key) {
  for (const ConfigKey& k : config_schema())
    if (k.key == key) return &k;
  return nullptr;
}

double to_number(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size()) throw InvalidArgument("config " + key + ": expected a number, got '" + text + "'");
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

json parse_json(const std::string& text) { return json::parse(text); }

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

// --- Configuration ---------------------------------------------------------------

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"seed", "0", "master seed; every random stream is derived from it by name"},
      {"dgp.kind", "base", "synthetic process: base | nonlinear | high_d"},
      {"dgp.m_true", "", "number of true latent factors"},
      {"dgp.s_active", "", "active true factors per timestamp"},
      {"dgp.d", "", "observed feature count (high_d forces 120)"},
      {"dgp.noise_sigma", "", "target noise standard deviation"},
      {"dgp.horizons", "", "comma-separated horizons (empty: 1..24)"},
      {"dgp.trajectory_length", "", "timestamps per trajectory"},
      {"dgp.num_trajectories", "", "number of trajectories"},
      {"dgp.context_dim", "", "dimension of the smooth history context"},
      {"dgp.feature_noise", "", "observation noise on the features"},
      {"dgp.mixing_scale", "", "magnitude of the nonzero latent loadings"},
      {"dgp.context_scale", "", "magnitude of the context contribution to targets"},
      {"dgp.latent_rho", "", "AR(1) coefficient of latent magnitudes"},
      {"dgp.context_rho", "", "AR(1) coefficient of the context"},
      {"dgp.distractor_rho", "", "AR(1) coefficient of distractor channels"},
      {"dgp.rotation_period", "", "mean timestamps between support changes"},
      {"dgp.start_date", "", "optional ISO start date for business-day labels"},
      {"model.window", "60", "look-back window W"},
      {"model.latent_dim", "16", "latent dimension m"},
      {"model.hidden", "128", "Pred hidden width"},
      {"model.enc_hidden", "0", "encoder hidden width (0: same as Pred)"},
      {"model.dec_hidden1", "64", "decoder first hidden layer"},
      {"model.dec_hidden2", "32", "decoder second hidden layer"},
      {"model.decoder", "mlp", "decoder: mlp | linearized"},
      {"model.dropout", "0.2", "Pred dropout rate during training"},
      {"model.use_history", "1", "feed the history context to the decoder (0/1)"},
      {"model.enc_shrink", "0", "soft-threshold on the encoder head"},
      {"train.beta", "5", "matching loss weight"},
      {"train.gamma", "0", "contrastive loss weight"},
      {"train.lr", "1e-4", "Adam learning rate"},
      {"train.clip", "1", "global gradient-norm clip"},
      {"train.batch", "64", "batch size"},
      {"train.epochs", "100", "maximum epochs"},
      {"train.patience", "10", "early-stopping patience (epochs)"},
      {"train.schedule", "cosine", "learning-rate schedule: cosine | constant"},
      {"train.mode", "two_stage", "two_stage | end_to_end | frozen_enc"},
      {"train.finetune_epochs", "0", "deployed-path fine-tune epochs for Pred/Dec"},
      {"energy.lambda", "1e-4", "L1 weight λ"},
      {"energy.mu", "0.1", "proximity weight μ"},
      {"energy.alpha", "0.01", "refinement step size α"},
      {"energy.K", "10", "refinement steps K"},
      {"data.fold", "0", "panel fold index, 1-based (0: the latest fold)"},
      {"data.horizons", "1,5,22", "panel forecast horizons in trading days"},
      {"data.train_years", "6", "panel fold train span in years"},
      {"data.fold_step", "2", "years between panel fold origins"},
      {"data.max_missing", "0.4", "drop panel columns missing more than this on train"},
      {"data.winsor_tail", "0.001", "winsorization tail per side"},
      {"data.screen", "0", "apply MI/correlation feature screening (0/1)"},
      {"data.min_mi", "0.1", "screening: minimum mutual information (nats)"},
      {"data.max_abs_corr", "0.85", "screening: within-block correlation cap"},
      {"eval.epsilon_zero", "1e-4", "no-change band for directional metrics"},
      {"interpret.active_threshold", "1e-3", "active-factor threshold"},
  };
  return schema;
}

std::map<std::string, std::string> config_preset(const std::string& name) {
  if (name == "paper") return {};
  if (name == "desk")
    return {{"dgp.mixing_scale", "6"},      {"dgp.context_scale", "3"},   {"model.window", "10"},
            {"model.latent_dim", "20"},     {"model.hidden", "8"},         {"model.enc_hidden", "32"},
            {"model.decoder", "linearized"}, {"train.lr", "2e-3"},         {"train.epochs", "30"}};
  throw InvalidArgument("unknown preset: " + name);
}

const std::string& KvConfig::get(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw InvalidArgument("config: unknown key " + key);
  return it->second;
}

double KvConfig::number(const std::string& key) const { return to_number(key, get(key)); }

int KvConfig::integer(const std::string& key) const {
  const double v = number(key);
  if (v != std::floor(v) || std::abs(v) > 2e9) throw InvalidArgument("config " + key + ": expected an integer");
  return static_cast<int>(v);
}

bool KvConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw InvalidArgument("config " + key + ": expected 0/1");
}

std::vector<int> KvConfig::int_list(const std::string& key) const {
  std::vector<int> out;
  for (const std::string& item : split_list(get(key))) {
    const double v = to_number(key, item);
    if (v != std::floor(v)) throw InvalidArgument("config " + key + ": expected integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw InvalidArgument("config: unknown key " + key);
  values[key] = value;
  explicit_keys.insert(key);
}

std::map<std::string, std::string> parse_kv(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw InvalidArgument("config line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, trim(t.substr(eq + 1))).second)
      throw InvalidArgument("config line " + std::to_string(lineno) + ": repeated key " + key);
  }
  return out;
}

std::string format_kv(const KvConfig& config) {
  std::string s;
  for (const ConfigKey& k : config_schema()) {
    const auto it = config.values.find(k.key);
    s += k.key + " = " + (it == config.values.end() ? std::string() : it->second) + "\n";
  }
  return s;
}

KvConfig resolve_config(const std::string& preset, const std::map<std::string, std::string>& file_entries,
                        const std::vector<std::string>& overrides) {
  KvConfig c;
  for (const ConfigKey& k : config_schema()) c.values[k.key] = k.default_value;
  for (const auto& [k, v] : config_preset(preset)) c.set(k, v);
  for (const auto& [k, v] : file_entries) c.set(k, v);
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + o + "'");
    c.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  return c;
}

DgpConfig dgp_config(const KvConfig& c) {
  DgpConfig d = DgpConfig::preset(dgp_kind_from_string(c.get("dgp.kind")));
  const auto has = [&](const char* k) { return !c.get(k).empty(); };
  if (has("dgp.m_true")) d.m_true = c.integer("dgp.m_true");
  if (has("dgp.s_active")) d.s_active = c.integer("dgp.s_active");
  if (has("dgp.d")) d.d = c.integer("dgp.d");
  if (has("dgp.noise_sigma")) d.noise_sigma = c.number("dgp.noise_sigma");
  if (has("dgp.horizons")) d.horizons = c.int_list("dgp.horizons");
  if (has("dgp.trajectory_length")) d.trajectory_length = c.integer("dgp.trajectory_length");
  if (has("dgp.num_trajectories")) d.num_trajectories = c.integer("dgp.num_trajectories");
  if (has("dgp.context_dim")) d.context_dim = c.integer("dgp.context_dim");
  if (has("dgp.feature_noise")) d.feature_noise = c.number("dgp.feature_noise");
  if (has("dgp.mixing_scale")) d.mixing_scale = c.number("dgp.mixing_scale");
  if (has("dgp.context_scale")) d.context_scale = c.number("dgp.context_scale");
  if (has("dgp.latent_rho")) d.latent_rho = c.number("dgp.latent_rho");
  if (has("dgp.context_rho")) d.context_rho = c.number("dgp.context_rho");
  if (has("dgp.distractor_rho")) d.distractor_rho = c.number("dgp.distractor_rho");
  if (has("dgp.rotation_period")) d.rotation_period = c.integer("dgp.rotation_period");
  d.start_date = c.get("dgp.start_date");
  d.seed = derive_seed(static_cast<std::uint64_t>(c.number("seed")), "dgp");
  d.validate();
  return d;
}

EnergyParams energy_params(const KvConfig& c) {
  EnergyParams p;
  p.lambda_l1 = c.number("energy.lambda");
  p.mu_prox = c.number("energy.mu");
  p.step_size = c.number("energy.alpha");
  p.num_steps = c.integer("energy.K");
  p.validate();
  return p;
}

ModelConfig model_config(const KvConfig& c, int num_features, int num_horizons) {
  ModelConfig m;
  m.window = c.integer("model.window");
  m.num_features = num_features;
  m.num_horizons = num_horizons;
  m.latent_dim = c.integer("model.latent_dim");
  m.hidden = c.integer("model.hidden");
  m.enc_hidden = c.integer("model.enc_hidden");
  m.dec_hidden1 = c.integer("model.dec_hidden1");
  m.dec_hidden2 = c.integer("model.dec_hidden2");
  m.decoder_kind = decoder_kind_from_string(c.get("model.decoder"));
  m.dropout = c.number("model.dropout");
  m.use_history = c.flag("model.use_history");
  m.enc_shrink = c.number("model.enc_shrink");
  m.seed = derive_seed(static_cast<std::uint64_t>(c.number("seed")), "model");
  m.validate();
  return m;
}

TrainConfig train_config(const KvConfig& c) {
  TrainConfig t;
  t.beta_match = c.number("train.beta");
  t.gamma_contrast = c.number("train.gamma");
  t.learning_rate = c.number("train.lr");
  t.grad_clip_norm = c.number("train.clip");
  t.batch_size = c.integer("train.batch");
  t.max_epochs = c.integer("train.epochs");
  t.patience = c.integer("train.patience");
  t.lr_schedule = lr_schedule_from_string(c.get("train.schedule"));
  t.mode = train_mode_from_string(c.get("train.mode"));
  t.finetune_epochs = c.integer("train.finetune_epochs");
  t.energy_params = energy_params(c);
  t.seed = derive_seed(static_cast<std::uint64_t>(c.number("seed")), "train");
  t.validate();
  return t;
}

// --- Data -----------------------------------------------------------------------------

namespace {

bool is_synthetic_dir(const fs::path& dir) {
  return fs::exists(dir / "config.json") && fs::exists(dir / "latents.csv");
}

bool is_panel_dir(const fs::path& dir) { return fs::exists(dir / "values.csv") && fs::exists(dir / "columns.csv"); }

// Windows ending in [first, last] whose look-back starts at row >= 0; with
// purge, targets must not reach past `last`.
std::vector<SampleRef> split_samples(const SeriesPanel& p, int window, Index first, Index last, int max_horizon,
                                     bool need_targets, bool purge) {
  std::vector<SampleRef> out;
  for (Index t = std::max<Index>(first, window - 1); t <= last; ++t) {
    if (purge && t + max_horizon > last) continue;
    if (need_targets && !p.targets.row(t).allFinite()) continue;
    out.push_back({0, t});
  }
  return out;
}

}  // namespace

LoadedData load_data(const fs::path& dir, const KvConfig& config, int window) {
  LoadedData d;
  if (is_synthetic_dir(dir)) {
    d.synthetic = true;
    d.dataset = load_dataset(dir);
    const SyntheticDataset& ds = *d.dataset;
    d.splits = {ds.windows(ds.split(0), window), ds.windows(ds.split(1), window), ds.windows(ds.split(2), window)};
    d.horizons = ds.config.resolved_horizons();
    for (int j = 0; j < ds.config.d; ++j) d.feature_names.push_back("x" + std::to_string(j));
  } else if (is_panel_dir(dir)) {
    const AlignedPanel raw = load_panel(dir);
    if (raw.length() == 0 || raw.width() == 0) throw DataError("panel " + dir.string() + " is empty");
    const FoldSchedule sched = make_folds(raw, config.integer("data.train_years"), config.integer("data.fold_step"));
    if (sched.folds.empty()) throw DataError("panel: the calendar is too short for any fold");
    const int fold_idx = config.integer("data.fold");
    const Fold* fold = nullptr;
    for (const Fold& f : sched.folds)
      if (f.index == fold_idx) fold = &f;
    if (fold_idx == 0) fold = &*std::max_element(sched.folds.begin(), sched.folds.end(),
                                                 [](const Fold& a, const Fold& b) { return a.test_year < b.test_year; });
    if (!fold) throw InvalidArgument("data.fold " + std::to_string(fold_idx) + " does not exist");
    PreprocessOptions po;
    po.max_missing = config.number("data.max_missing");
    po.winsor_tail = config.number("data.winsor_tail");
    PreprocessResult pre = preprocess(raw, *fold, po);
    d.notes = pre.warnings;
    d.horizons = config.int_list("data.horizons");
    if (d.horizons.empty()) throw InvalidArgument("data.horizons is empty");
    const Index T = raw.length();
    SeriesPanel sp;
    sp.targets = Mat::Constant(T, static_cast<Index>(d.horizons.size()), std::numeric_limits<double>::quiet_NaN());
    sp.base = Vec::Zero(T);
    d.has_targets = fs::exists(dir / "prices.csv");
    if (d.has_targets) {
      const CsvTable prices = read_csv(dir / "prices.csv");
      const std::size_t c_date = prices.column("date"), c_price = prices.column("price");
      if (prices.rows.size() != static_cast<std::size_t>(T))
        throw DataError("prices.csv must have one row per panel date");
      Vec p(T);
      for (Index t = 0; t < T; ++t) {
        const auto& row = prices.rows[static_cast<std::size_t>(t)];
        if (parse_date(row[c_date]) != raw.calendar[static_cast<std::size_t>(t)])
          throw DataError("prices.csv dates differ from the panel calendar at row " + std::to_string(t));
        p[t] = parse_double(row[c_price]);
        if (!(p[t] > 0.0)) throw DataError("prices.csv: prices must be positive");
      }
      make_log_targets(p, d.horizons, sp.targets, sp.base);
    } else {
      d.notes.push_back("no prices.csv: forecasts only, no realized targets");
    }
    const std::vector<Index> train_rows = raw.rows_in_years(fold->train_first, fold->train_last);
    if (config.flag("data.screen")) {
      if (!d.has_targets) throw DataError("feature screening needs prices.csv");
      Mat returns = sp.targets.colwise() - sp.base;
      ScreenOptions so;
      so.min_mi = config.number("data.min_mi");
      so.max_abs_corr = config.number("data.max_abs_corr");
      const ScreenResult sr = screen_features(pre.panel, returns, train_rows, so);
      if (sr.retained.empty()) throw DataError("feature screening retained no columns");
      pre.panel = select_columns(pre.panel, sr.retained);
    }
    sp.features = pre.panel.values;
    sp.masks = pre.panel.masks;
    for (Date day : raw.calendar) sp.dates.push_back(format_date(day));
    for (const ColumnMeta& c : pre.panel.columns) d.feature_names.push_back(c.series_id);
    auto panels = std::make_shared<std::vector<SeriesPanel>>(1, std::move(sp));
    const SeriesPanel& ref = panels->front();
    const int max_h = *std::max_element(d.horizons.begin(), d.horizons.end());
    const auto rows = [&](int y0, int y1) {
      const auto r = raw.rows_in_years(y0, y1);
      if (r.empty()) throw DataError("panel: no rows in years " + std::to_string(y0) + "-" + std::to_string(y1));
      return std::pair<Index, Index>{r.front(), r.back()};
    };
    const auto [tr0, tr1] = rows(fold->train_first, fold->train_last);
    const auto [va0, va1] = rows(fold->val_year, fold->val_year);
    const auto [te0, te1] = rows(fold->test_year, fold->test_year);
    const bool nt = d.has_targets;
    d.splits.train = WindowedData(panels, split_samples(ref, window, tr0, tr1, max_h, nt, true), window);
    d.splits.val = WindowedData(panels, split_samples(ref, window, va0, va1, max_h, nt, true), window);
    d.splits.test = WindowedData(panels, split_samples(ref, window, te0, te1, max_h, nt, false), window);
    d.notes.push_back("fold " + std::to_string(fold->index) + ": train " + std::to_string(fold->train_first) + "-" +
                      std::to_string(fold->train_last) + ", validation " + std::to_string(fold->val_year) +
                      ", test " + std::to_string(fold->test_year));
  } else {
    throw DataError(dir.string() + " is neither a synthetic dataset nor an aligned panel");
  }
  if (d.splits.train.empty() || d.splits.val.empty() || d.splits.test.empty())
    throw DataError("data: a split has no complete windows at W=" + std::to_string(window));
  return d;
}

std::map<std::string, std::string> hash_tree(const fs::path& root, const std::set<std::string>& exclude) {
  std::map<std::string, std::string> out;
  if (fs::is_regular_file(root)) {
    out[root.filename().generic_string()] = sha256_file(root);
    return out;
  }
  if (!fs::is_directory(root)) throw DataError("missing input " + root.string());
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).generic_string();
    if (exclude.count(rel)) continue;
    out[rel] = sha256_file(e.path());
  }
  return out;
}

// --- Commands ------------------------------------------------------------------------------

namespace {

struct Common {
  std::string out;
  std::string config_file;
  std::string preset = "paper";
  std::vector<std::string> sets;
  long long seed = -1;
  int threads = 1;
};

struct Context {
  std::vector<std::string> args;
  std::string command;
  fs::path out;
  KvConfig config;
  json inputs = json::object();
  std::ostream* log = nullptr;

  void add_input(const std::string& path) { inputs[path] = hash_tree(path, {"manifest.json"}); }
};

// Config resolution shared by every command; base_entries (from a
// checkpoint) sit between the preset and the --config file.
KvConfig build_config(const Common& c, Context& ctx, const std::map<std::string, std::string>& base_entries = {}) {
  std::map<std::string, std::string> entries = base_entries;
  if (!c.config_file.empty()) {
    ctx.add_input(c.config_file);
    for (const auto& [k, v] : parse_kv(read_file(c.config_file))) entries[k] = v;
  }
  KvConfig kv = resolve_config(c.preset, entries, c.sets);
  if (c.seed >= 0) kv.set("seed", std::to_string(c.seed));
  if (c.threads < 1) throw InvalidArgument("--threads must be >= 1");
  return kv;
}

struct CheckpointInfo {
  ModelBundle bundle;
  std::map<std::string, std::string> config;
};

CheckpointInfo read_checkpoint(const std::string& dir, Context& ctx) {
  ctx.add_input(dir);
  CheckpointInfo info{load_checkpoint(dir), {}};
  if (fs::exists(fs::path(dir) / "config.txt")) info.config = parse_kv(read_file(fs::path(dir) / "config.txt"));
  return info;
}

const WindowedData& pick_split(const LoadedData& d, const std::string& split) {
  if (split == "train") return d.splits.train;
  if (split == "val") return d.splits.val;
  if (split == "test") return d.splits.test;
  throw InvalidArgument("--split must be train, val or test");
}

json accuracy_json(const AccuracyMetrics& a) {
  return {{"rmse", a.rmse}, {"mae", a.mae}, {"pooled_rmse", a.pooled_rmse}, {"pooled_mae", a.pooled_mae}};
}

void check_window(const ModelBundle& b, const LoadedData& d) {
  if (d.splits.train.num_features() != b.config.num_features)
    throw DataError("checkpoint expects " + std::to_string(b.config.num_features) + " features, data has " +
                    std::to_string(d.splits.train.num_features()));
  if (d.splits.train.num_horizons() != b.config.num_horizons)
    throw DataError("checkpoint expects " + std::to_string(b.config.num_horizons) + " horizons");
}

// synth-gen ---------------------------------------------------------------------------------

int cmd_synth_gen(Context& ctx) {
  const DgpConfig dgp = dgp_config(ctx.config);
  const SyntheticDataset ds = generate(dgp);
  save_dataset(ds, ctx.out);
  ctx.config.set("dgp.m_true", std::to_string(dgp.m_true));
  ctx.config.set("dgp.d", std::to_string(dgp.d));
  ctx.config.set("dgp.horizons", join_ints(dgp.resolved_horizons()));
  *ctx.log << "generated " << dgp.num_trajectories << " trajectories, d=" << dgp.d << " -> " << ctx.out.string()
           << "\n";
  return 0;
}

// align ---------------------------------------------------------------------------------------

int cmd_align(Context& ctx, const std::string& series_dir, const std::string& calendar_file,
              const std::string& audit_panel) {
  ctx.add_input(series_dir);
  ctx.add_input(calendar_file);
  const std::vector<VintageSeries> series = load_series_dir(series_dir);
  if (series.empty()) throw DataError("series directory " + series_dir + " lists no series");
  const AlignedPanel panel = align(series, load_calendar(calendar_file));
  save_panel(panel, ctx.out);
  AuditReport audit;
  if (audit_panel.empty()) {
    audit = audit_leakage(panel, series);
  } else {
    ctx.add_input(audit_panel);
    audit = audit_leakage(load_panel(audit_panel), series);
  }
  json report = parse_json(audit.to_json());
  report["audited"] = audit_panel.empty() ? "aligned" : "supplied";
  report["alignment_notes"] = panel.notes;
  write_json(ctx.out / "audit.json", report);
  *ctx.log << "aligned " << series.size() << " series on " << panel.length() << " days; audit: "
           << audit.violations.size() << " violation(s)\n";
  return audit.clean() ? 0 : 2;
}

// train ---------------------------------------------------------------------------------------

int cmd_train(Context& ctx, const std::string& data_dir) {
  ctx.add_input(data_dir);
  const int window = ctx.config.integer("model.window");
  const LoadedData data = load_data(data_dir, ctx.config, window);
  const ModelConfig mc = model_config(ctx.config, static_cast<int>(data.splits.train.num_features()),
                                      static_cast<int>(data.horizons.size()));
  const TrainConfig tc = train_config(ctx.config);
  if (!data.has_targets) throw DataError("training needs realized targets");
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochStats& s) {
    *ctx.log << "epoch " << s.epoch << " train " << s.train_pred << " val_rmse " << s.val_rmse << "\n";
  };
  const TrainResult r = train_two_stage(ModelBundle::initialize(mc), data.splits.train, data.splits.val, tc, hooks);
  const fs::path ck = ctx.out / "checkpoint";
  save_checkpoint(r.bundle, ck, json{{"horizons", data.horizons}}.dump());
  write_file(ck / "config.txt", format_kv(ctx.config));

  json epochs = json::array();
  CsvTable t;
  t.header = {"epoch", "learning_rate", "train_pred", "train_match", "train_contrast",
              "val_pred", "val_match", "val_rmse", "align_r2", "align_cos"};
  for (const EpochStats& s : r.report.epochs) {
    epochs.push_back({{"epoch", s.epoch}, {"learning_rate", s.learning_rate}, {"train_pred", s.train_pred},
                      {"train_match", s.train_match}, {"train_contrast", s.train_contrast},
                      {"val_pred", s.val_pred}, {"val_match", s.val_match}, {"val_rmse", s.val_rmse},
                      {"align_r2", s.align_r2}, {"align_cos", s.align_cos}});
    t.rows.push_back({std::to_string(s.epoch), format_double(s.learning_rate), format_double(s.train_pred),
                      format_double(s.train_match), format_double(s.train_contrast), format_double(s.val_pred),
                      format_double(s.val_match), format_double(s.val_rmse), format_double(s.align_r2),
                      format_double(s.align_cos)});
  }
  write_json(ctx.out / "train_report.json", {{"best_epoch", r.report.best_epoch},
                                             {"stopping_epoch", r.report.stopping_epoch},
                                             {"best_val_rmse", r.report.best_val_rmse},
                                             {"train_samples", data.splits.train.size()},
                                             {"val_samples", data.splits.val.size()},
                                             {"notes", data.notes},
                                             {"epochs", epochs}});
  write_file(ctx.out / "train_report.csv", format_csv(t));
  *ctx.log << "best epoch " << r.report.best_epoch << ", validation RMSE " << r.report.best_val_rmse << "\n";
  return 0;
}

// eval ----------------------------------------------------------------------------------------

int cmd_eval(Context& ctx, const CheckpointInfo& ck, const std::string& data_dir, const std::string& split,
             const std::string& path, const std::string& dm_against) {
  ctx.add_input(data_dir);
  if (path != "deployed" && path != "refined") throw InvalidArgument("--path must be deployed or refined");
  const LoadedData data = load_data(data_dir, ctx.config, ck.bundle.config.window);
  check_window(ck.bundle, data);
  const WindowedData& eval = pick_split(data, split);
  const EnergyParams ep = energy_params(ctx.config);
  const bool refined = path == "refined";
  if (refined && !data.has_targets) throw DataError("--path refined needs realized targets on the evaluation split");

  json report{{"path", path}, {"split", split}, {"samples", eval.size()}, {"horizons", data.horizons},
              {"notes", data.notes}};
  if (!data.has_targets) {
    const PathOutputs p = run_paths(ck.bundle, eval, ep, false);
    CsvTable f;
    f.header = {"date", "horizon", "predicted"};
    const Vec base = eval.base(iota_indices(eval.size()));
    for (Index i = 0; i < eval.size(); ++i)
      for (std::size_t k = 0; k < data.horizons.size(); ++k)
        f.rows.push_back({eval.label(i), std::to_string(data.horizons[k]),
                          format_double(p.deployed(static_cast<Index>(k), i) + base[i])});
    write_file(ctx.out / "forecasts.csv", format_csv(f));
    report["notice"] = "no realized targets: forecasts only";
    write_json(ctx.out / "metrics.json", report);
    return 0;
  }

  const PathOutputs p = run_paths(ck.bundle, eval, ep, true);
  const ForecastSet deployed = forecast_set_from_paths(eval, p.deployed, data.horizons, PathKind::deployed);
  const ForecastSet refined_set = forecast_set_from_paths(eval, p.refined, data.horizons, PathKind::refined);
  const ForecastSet& main = refined ? refined_set : deployed;

  CsvTable fc;
  fc.header = {"date", "horizon", "predicted", "realized"};
  for (Index i = 0; i < main.size(); ++i)
    for (std::size_t k = 0; k < data.horizons.size(); ++k)
      fc.rows.push_back({main.dates[static_cast<std::size_t>(i)], std::to_string(data.horizons[k]),
                         format_double(main.predicted(i, static_cast<Index>(k))),
                         format_double(main.realized(i, static_cast<Index>(k)))});
  write_file(ctx.out / "forecasts.csv", format_csv(fc));

  DirectionalConfig dc;
  dc.epsilon_zero = ctx.config.number("eval.epsilon_zero");
  const auto directional = [&](const ForecastSet& f) {
    json arr = json::array();
    for (std::size_t k = 0; k < f.horizons.size(); ++k) {
      try {
        const DirectionalMetrics m = directional_metrics(f, static_cast<Index>(k), dc);
        arr.push_back({{"horizon", f.horizons[k]}, {"n", m.n}, {"nc_rate", m.nc_rate}, {"da", m.da_excl},
                       {"up_hit", m.up_hit}, {"down_hit", m.down_hit}, {"mcc", m.mcc}, {"brier", m.brier}});
      } catch (const DegenerateError& e) {
        arr.push_back({{"horizon", f.horizons[k]}, {"undefined", e.what()}});
      }
    }
    return arr;
  };

  const ForecastSet persistence =
      forecast_set_from_paths(eval, persistence_forecast(eval), data.horizons, PathKind::baseline);
  const RidgeBaseline ridge = fit_ridge(data.splits.train, data.splits.val);
  const ForecastSet ridge_set = forecast_set_from_paths(eval, ridge.predict(eval), data.horizons, PathKind::baseline);

  const AccuracyMetrics acc = accuracy_metrics(main);
  report["accuracy"] = accuracy_json(acc);
  report["directional"] = directional(main);
  const GapReport gap = deployed_vs_refined(deployed, refined_set);
  report["gap"] = {{"rmse_deployed", gap.rmse_deployed}, {"rmse_refined", gap.rmse_refined},
                   {"delta_rmse", gap.delta_rmse}, {"delta_rmse_pct", gap.delta_rmse_pct},
                   {"pooled_delta_rmse", gap.pooled_delta_rmse}};
  report["baselines"] = {{"persistence", accuracy_json(accuracy_metrics(persistence))},
                         {"ridge", accuracy_json(accuracy_metrics(ridge_set))}};
  report["baselines"]["ridge"]["lambda"] = ridge.lambda;

  CsvTable mt;
  mt.header = {"forecaster", "horizon", "rmse", "mae"};
  const auto add_rows = [&](const std::string& name, const AccuracyMetrics& a) {
    for (std::size_t k = 0; k < data.horizons.size(); ++k)
      mt.rows.push_back({name, std::to_string(data.horizons[k]), format_double(a.rmse[k]), format_double(a.mae[k])});
  };
  add_rows(path, acc);
  add_rows("persistence", accuracy_metrics(persistence));
  add_rows("ridge", accuracy_metrics(ridge_set));
  write_file(ctx.out / "metrics.csv", format_csv(mt));

  if (!dm_against.empty()) {
    const ForecastSet* other = nullptr;
    if (dm_against == "persistence") other = &persistence;
    else if (dm_against == "ridge") other = &ridge_set;
    else if (dm_against == "self") other = &main;
    else if (dm_against == "deployed") other = &deployed;
    else if (dm_against == "refined") other = &refined_set;
    else throw InvalidArgument("--dm-against must be persistence, ridge, self, deployed or refined");
    CsvTable dt;
    dt.header = {"horizon", "statistic", "p_value", "mean_loss_diff"};
    json arr = json::array();
    for (std::size_t k = 0; k < data.horizons.size(); ++k) {
      const Index kk = static_cast<Index>(k);
      const Vec la = (main.predicted.col(kk) - main.realized.col(kk)).array().square();
      const Vec lb = (other->predicted.col(kk) - other->realized.col(kk)).array().square();
      const DmResult r = dm_test(la, lb, data.horizons[k]);
      dt.rows.push_back({std::to_string(data.horizons[k]), format_double(r.statistic), format_double(r.p_value),
                         format_double(r.mean_diff)});
      arr.push_back({{"horizon", data.horizons[k]}, {"statistic", r.statistic}, {"p_value", r.p_value},
                     {"mean_loss_diff", r.mean_diff}});
    }
    report["dm"] = {{"against", dm_against}, {"alternative", "model loss exceeds the comparator's"}, {"tests", arr}};
    write_file(ctx.out / "dm.csv", format_csv(dt));
  }
  write_json(ctx.out / "metrics.json", report);
  *ctx.log << path << " pooled RMSE " << acc.pooled_rmse << " on " << eval.size() << " samples\n";
  return 0;
}

// interpret -----------------------------------------------------------------------------------

struct InterpretOptions {
  std::string data_dir;
  std::string split = "test";
  bool refined = false;
  std::string drivers_csv;
  bool true_latent_drivers = false;
  std::string events_csv;
  int factor = 0;
  int half_width = 3;
  int permutations = 1000;
  double delta = 1.0;
  int cf_samples = 200;
};

int cmd_interpret(Context& ctx, const std::vector<CheckpointInfo>& cks, const InterpretOptions& o) {
  ctx.add_input(o.data_dir);
  const ModelBundle& b0 = cks.front().bundle;
  for (const CheckpointInfo& c : cks)
    if (c.bundle.config.window != b0.config.window || c.bundle.config.latent_dim != b0.config.latent_dim)
      throw InvalidArgument("interpret: checkpoints must share window and latent dimension");
  const LoadedData data = load_data(o.data_dir, ctx.config, b0.config.window);
  for (const CheckpointInfo& c : cks) check_window(c.bundle, data);
  const WindowedData& eval = pick_split(data, o.split);
  const EnergyParams ep = energy_params(ctx.config);
  const double thr = ctx.config.number("interpret.active_threshold");
  if (o.refined && !data.has_targets) throw DataError("refined factors need realized targets");

  std::vector<FactorPanel> panels;
  for (const CheckpointInfo& c : cks) panels.push_back(factor_panel(c.bundle, eval, ep, o.refined, thr));
  const FactorPanel& fp = panels.front();
  json report{{"split", o.split}, {"latents", o.refined ? "refined" : "deployed"}, {"samples", eval.size()}};
  json notices = json::array();

  json active = json::array();
  for (const FactorPanel& p : panels) active.push_back(active_factor_stats(p).mean_count);
  report["active"] = {{"threshold", thr}, {"mean_count", active}};

  if (panels.size() >= 2) {
    report["stability"] = parse_json(to_json(procrustes_stability(panels)));
  } else {
    notices.push_back("stability omitted: needs at least two checkpoints");
  }

  // Drivers
  Mat drivers;
  std::vector<std::string> driver_names;
  if (!o.drivers_csv.empty() && o.true_latent_drivers)
    throw InvalidArgument("--drivers and --true-latent-drivers are exclusive");
  if (!o.drivers_csv.empty()) {
    ctx.add_input(o.drivers_csv);
    const CsvTable t = read_csv(o.drivers_csv);
    const std::size_t c_date = t.column("date");
    std::map<std::string, std::size_t> by_date;
    for (std::size_t r = 0; r < t.rows.size(); ++r) by_date[t.rows[r][c_date]] = r;
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < t.header.size(); ++j)
      if (j != c_date) {
        cols.push_back(j);
        driver_names.push_back(t.header[j]);
      }
    drivers.resize(fp.length(), static_cast<Index>(cols.size()));
    for (Index i = 0; i < fp.length(); ++i) {
      const auto it = by_date.find(fp.dates[static_cast<std::size_t>(i)]);
      if (it == by_date.end()) throw DataError("drivers: no row for " + fp.dates[static_cast<std::size_t>(i)]);
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const double v = parse_double(t.rows[it->second][cols[j]]);
        if (!std::isfinite(v)) throw DataError("drivers: missing value at " + it->first);
        drivers(i, static_cast<Index>(j)) = v;
      }
    }
  } else if (o.true_latent_drivers) {
    if (!data.synthetic) throw DataError("--true-latent-drivers needs a synthetic dataset");
    drivers = data.dataset->true_latents(eval).transpose();
    for (Index k = 0; k < drivers.cols(); ++k) driver_names.push_back("true_z" + std::to_string(k));
  }
  if (drivers.size() > 0) {
    const DriverReport dr = driver_regression(fp, drivers, driver_names, data.feature_names);
    report["drivers"] = parse_json(to_json(dr));
    write_file(ctx.out / "driver_heatmap.csv", driver_heatmap_csv(dr, driver_names));
  } else {
    notices.push_back("drivers omitted: no driver file supplied");
  }

  // Events
  if (!o.events_csv.empty()) {
    ctx.add_input(o.events_csv);
    const CsvTable t = read_csv(o.events_csv);
    const std::size_t c_date = t.column("date");
    EventSpec spec;
    for (const auto& r : t.rows) spec.event_dates.push_back(r[c_date]);
    spec.half_width = o.half_width;
    spec.factor = o.factor;
    spec.num_permutations = o.permutations;
    spec.seed = derive_seed(static_cast<std::uint64_t>(ctx.config.number("seed")), "interpret.events");
    report["events"] = parse_json(to_json(event_study(fp, spec)));
    report["events"]["factor"] = o.factor;
  } else {
    notices.push_back("event study omitted: no event file supplied");
  }

  // Counterfactuals: mean forecast shift per factor and horizon over evenly
  // spaced samples.
  const Vec stds = factor_std(b0, data.splits.train);
  const Index n = eval.size();
  const Index take = std::min<Index>(n, std::max(1, o.cf_samples));
  CsvTable cf;
  cf.header = {"factor", "horizon", "mean_shift"};
  for (Index k = 0; k < b0.config.latent_dim; ++k) {
    Vec acc = Vec::Zero(b0.config.num_horizons);
    for (Index s = 0; s < take; ++s)
      acc += counterfactual(b0, eval.window_at(s * n / take), k, o.delta, stds);
    acc /= static_cast<double>(take);
    for (std::size_t h = 0; h < data.horizons.size(); ++h)
      cf.rows.push_back({std::to_string(k), std::to_string(data.horizons[h]), format_double(acc[static_cast<Index>(h)])});
  }
  write_file(ctx.out / "counterfactual.csv", format_csv(cf));
  report["counterfactual"] = {{"delta_sd", o.delta}, {"samples", take}};

  CsvTable ft;
  ft.header = {"date"};
  for (Index k = 0; k < fp.latents.cols(); ++k) ft.header.push_back("z" + std::to_string(k));
  for (Index i = 0; i < fp.length(); ++i) {
    std::vector<std::string> row{fp.dates[static_cast<std::size_t>(i)]};
    for (Index k = 0; k < fp.latents.cols(); ++k) row.push_back(format_double(fp.latents(i, k)));
    ft.rows.push_back(std::move(row));
  }
  write_file(ctx.out / "factors.csv", format_csv(ft));

  report["notices"] = notices;
  write_json(ctx.out / "report.json", report);
  for (const auto& s : notices) *ctx.log << "notice: " << s.get<std::string>() << "\n";
  return 0;
}

// gap-diagnose ------------------------------------------------------------------------------

int cmd_gap(Context& ctx, const CheckpointInfo& ck, const std::string& data_dir, const std::string& split,
            const std::vector<int>& k_grid) {
  ctx.add_input(data_dir);
  const LoadedData data = load_data(data_dir, ctx.config, ck.bundle.config.window);
  check_window(ck.bundle, data);
  if (!data.has_targets) throw DataError("gap diagnosis needs realized targets");
  const GapDiagnosis g =
      diagnose_gap(ck.bundle, data.splits.train, pick_split(data, split), energy_params(ctx.config), k_grid);
  json report = parse_json(to_json(g));
  report["split"] = split;
  write_json(ctx.out / "theory.json", report);
  CsvTable t;
  t.header = {"K", "deployed_rmse", "refined_rmse", "observed_gap", "l_match", "predicted_gap", "ratio", "satisfied"};
  for (const GapRow& r : g.k_sweep)
    t.rows.push_back({std::to_string(r.num_steps), format_double(r.deployed_rmse), format_double(r.refined_rmse),
                      format_double(r.observed_gap), format_double(r.l_match), format_double(r.predicted_gap),
                      format_double(r.ratio), r.satisfied ? "1" : "0"});
  write_file(ctx.out / "k_sweep.csv", format_csv(t));
  *ctx.log << "gap " << g.main.observed_gap << " vs bound " << g.main.predicted_gap
           << (g.main.satisfied ? " (satisfied)" : " (violated)") << "\n";
  return 0;
}

// ablate ----------------------------------------------------------------------------------------

int cmd_ablate(Context& ctx, const std::string& data_dir, const std::string& grid,
               const std::vector<std::string>& variants_in, int seeds, int threads) {
  ctx.add_input(data_dir);
  const int window = ctx.config.integer("model.window");
  const LoadedData data = load_data(data_dir, ctx.config, window);
  if (!data.has_targets) throw DataError("ablation needs realized targets");
  const ModelConfig mc = model_config(ctx.config, static_cast<int>(data.splits.train.num_features()),
                                      static_cast<int>(data.horizons.size()));
  const TrainConfig tc = train_config(ctx.config);
  std::vector<std::string> variants = variants_in;
  std::string reference = "full";
  if (variants.empty()) {
    if (grid == "table7") variants = ablation_variants();
    else if (grid == "mu") variants = mu_sweep_variants();
    else throw InvalidArgument("--grid must be table7 or mu");
  }
  if (grid == "mu") reference = "mu=0.1";
  const std::uint64_t master = derive_seed(static_cast<std::uint64_t>(ctx.config.number("seed")), "ablate");
  const auto results = run_grid(data.splits, mc, tc, variants, seeds, master, threads);
  const auto summary = summarize(results, reference);
  write_file(ctx.out / "runs.csv", results_csv(results));
  write_file(ctx.out / "summary.csv", summary_csv(summary));
  json s = json::array();
  for (const VariantSummary& v : summary)
    s.push_back({{"variant", v.variant}, {"runs", v.runs}, {"failures", v.failures}, {"test_rmse", v.test_rmse},
                 {"rmse_change_pct", v.rmse_change_pct}, {"direction_accuracy", v.direction_accuracy},
                 {"align_r2", v.align_r2}, {"mean_active", v.mean_active}});
  write_json(ctx.out / "ablation.json", {{"grid", grid}, {"reference", reference}, {"seeds", seeds}, {"summary", s}});
  for (const VariantSummary& v : summary)
    *ctx.log << v.variant << ": RMSE " << v.test_rmse << " (" << v.rmse_change_pct << "%), active " << v.mean_active
             << "\n";
  return 0;
}

// manifest ---------------------------------------------------------------------------------------

void write_manifest(const Context& ctx, double seconds, int exit_code) {
  json m{{"command", ctx.command},
         {"args", ctx.args},
         {"config", format_kv(ctx.config)},
         {"seed", ctx.config.get("seed")},
         {"inputs", ctx.inputs},
         {"artifacts", hash_tree(ctx.out, {"manifest.json"})},
         {"exit_code", exit_code},
         {"version", kToolVersion},
         {"started_utc", utc_now()},
         {"wall_clock_seconds", seconds}};
  write_json(ctx.out / "manifest.json", m);
}

int cmd_rerun(const std::string& manifest_path, const std::string& out, std::ostream& log, std::ostream& err) {
  json m;
  try {
    m = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  if (!m.contains("args") || !m.contains("artifacts")) throw DataError("manifest: missing args or artifacts");
  // Inputs must be unchanged for the replay to be meaningful.
  for (const auto& [path, files] : m["inputs"].items()) {
    const auto now = hash_tree(path, {"manifest.json"});
    if (json(now) != files) throw DataError("manifest input changed since the original run: " + path);
  }
  std::vector<std::string> args = m["args"].get<std::vector<std::string>>();
  bool replaced = false;
  for (std::size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--out") {
      args[i + 1] = out;
      replaced = true;
    }
  if (!replaced) throw DataError("manifest: args carry no --out");
  if (fs::absolute(out) == fs::absolute(fs::path(manifest_path).parent_path()))
    throw InvalidArgument("rerun: --out must differ from the original output directory");
  const int code = run_cli(args, log, err);
  if (code != m.value("exit_code", 0)) {
    err << "rerun exit code " << code << " differs from the recorded " << m.value("exit_code", 0) << "\n";
    return 2;
  }
  const auto fresh = hash_tree(out, {"manifest.json"});
  const auto recorded = m["artifacts"].get<std::map<std::string, std::string>>();
  json diff{{"identical", fresh == recorded}, {"mismatched", json::array()}, {"missing", json::array()},
            {"extra", json::array()}};
  for (const auto& [k, v] : recorded) {
    const auto it = fresh.find(k);
    if (it == fresh.end()) diff["missing"].push_back(k);
    else if (it->second != v) diff["mismatched"].push_back(k);
  }
  for (const auto& [k, v] : fresh)
    if (!recorded.count(k)) diff["extra"].push_back(k);
  log << diff.dump(2) << "\n";
  return fresh == recorded ? 0 : 2;
}

}  // namespace

// --- Entry point -----------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse latent factor forecasting toolkit", "slff"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  Common common;
  const auto add_common = [&](CLI::App* sub, bool needs_out = true) {
    auto* o = sub->add_option("--out", common.out, "output directory");
    if (needs_out) o->required();
    sub->add_option("--config", common.config_file, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--preset", common.preset, "configuration preset: paper | desk");
    sub->add_option("--set", common.sets, "override a configuration key (key=value), repeatable");
    sub->add_option("--seed", common.seed, "master seed");
    sub->add_option("--threads", common.threads, "worker threads");
  };

  auto* synth = app.add_subcommand("synth-gen", "generate a synthetic dataset");
  add_common(synth);

  std::string series_dir, calendar_file, audit_panel;
  auto* align_cmd = app.add_subcommand("align", "align vintage series onto a trading calendar and audit leakage");
  add_common(align_cmd);
  align_cmd->add_option("--series", series_dir, "series directory (catalog.csv + one CSV per series)")->required();
  align_cmd->add_option("--calendar", calendar_file, "calendar CSV with a date column")->required();
  align_cmd->add_option("--audit-panel", audit_panel, "audit this panel instead of the freshly aligned one");

  std::string data_dir;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--data", data_dir, "synthetic dataset or aligned panel directory")->required();

  std::vector<std::string> checkpoints;
  std::string split = "test", path = "deployed", dm_against;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoints, "checkpoint directory")->required()->expected(1);
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--split", split, "train | val | test");
  eval->add_option("--path", path, "deployed | refined");
  eval->add_option("--dm-against", dm_against, "persistence | ridge | self | deployed | refined");

  InterpretOptions io;
  auto* interp = app.add_subcommand("interpret", "stability, drivers, counterfactuals and event studies");
  add_common(interp);
  interp->add_option("--checkpoint", checkpoints, "checkpoint directory, repeatable")->required();
  interp->add_option("--data", io.data_dir)->required();
  interp->add_option("--split", io.split);
  interp->add_flag("--refined", io.refined, "use refined rather than deployed latents");
  interp->add_option("--drivers", io.drivers_csv, "driver CSV: date column plus one column per driver");
  interp->add_flag("--true-latent-drivers", io.true_latent_drivers, "use the synthetic true latents as drivers");
  interp->add_option("--events", io.events_csv, "event CSV with a date column");
  interp->add_option("--factor", io.factor, "factor for the event study");
  interp->add_option("--half-width", io.half_width, "event window half-width (rows)");
  interp->add_option("--permutations", io.permutations, "randomization draws");
  interp->add_option("--delta", io.delta, "counterfactual shift in factor standard deviations");
  interp->add_option("--cf-samples", io.cf_samples, "samples averaged for counterfactuals");

  std::vector<int> k_grid{1, 5, 10, 20};
  auto* gap = app.add_subcommand("gap-diagnose", "deployed-vs-refined gap against its bound");
  add_common(gap);
  gap->add_option("--checkpoint", checkpoints)->required()->expected(1);
  gap->add_option("--data", data_dir)->required();
  gap->add_option("--split", split);
  gap->add_option("--k-grid", k_grid, "refinement depths for the sweep")->delimiter(',');

  std::string grid = "table7";
  std::vector<std::string> variants;
  int seeds = 3;
  auto* ablate = app.add_subcommand("ablate", "variant grid (ablations or the μ sweep)");
  add_common(ablate);
  ablate->add_option("--data", data_dir)->required();
  ablate->add_option("--grid", grid, "table7 | mu");
  ablate->add_option("--variants", variants, "explicit variant list")->delimiter(',');
  ablate->add_option("--seeds", seeds, "seeds per variant");

  std::string manifest_path;
  auto* rerun = app.add_subcommand("rerun", "replay a manifest and compare artifact hashes");
  rerun->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  rerun->add_option("--out", common.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (rerun->parsed()) return cmd_rerun(manifest_path, common.out, out, err);

    Context ctx;
    ctx.args = args;
    ctx.out = common.out;
    ctx.log = &out;
    const auto start = std::chrono::steady_clock::now();
    std::map<std::string, std::string> base;
    std::vector<CheckpointInfo> cks;
    for (const std::string& c : checkpoints) cks.push_back(read_checkpoint(c, ctx));
    if (!cks.empty()) base = cks.front().config;
    ctx.config = build_config(common, ctx, base);
    fs::create_directories(ctx.out);

    int code = 0;
    if (synth->parsed()) {
      ctx.command = "synth-gen";
      code = cmd_synth_gen(ctx);
    } else if (align_cmd->parsed()) {
      ctx.command = "align";
      code = cmd_align(ctx, series_dir, calendar_file, audit_panel);
    } else if (train->parsed()) {
      ctx.command = "train";
      code = cmd_train(ctx, data_dir);
    } else if (eval->parsed()) {
      ctx.command = "eval";
      code = cmd_eval(ctx, cks.front(), data_dir, split, path, dm_against);
    } else if (interp->parsed()) {
      ctx.command = "interpret";
      code = cmd_interpret(ctx, cks, io);
    } else if (gap->parsed()) {
      ctx.command = "gap-diagnose";
      code = cmd_gap(ctx, cks.front(), data_dir, split, k_grid);
    } else if (ablate->parsed()) {
      ctx.command = "ablate";
      code = cmd_ablate(ctx, data_dir, grid, variants, seeds, common.threads);
    }
    write_manifest(ctx, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), code);
    return code;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const InvalidArgument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return 1;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DegenerateError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace slff
