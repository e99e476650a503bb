#include "nopvis/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace nopvis {
namespace {

struct Rng {
  std::mt19937_64 g;
  explicit Rng(std::uint64_t seed) : g(seed) {}
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(g() % n); }
  double unit() { return static_cast<double>(g() >> 11) * 0x1.0p-53; }
  bool chance(double p) { return unit() < p; }
  template <class T>
  const T& pick(const std::vector<T>& v) { return v[below(v.size())]; }
};

const std::vector<std::string> kFiller = {
    "add-int",       "sub-int",       "add-int/lit8",  "mul-int/lit8",
    "shl-int/lit8",  "shr-int/lit8",  "rsub-int/lit8", "and-int/lit8",
    "or-int/lit8",   "neg-int",       "and-int",       "or-int",
    "xor-int",       "mul-int",
};

bool is_lit8(std::string_view op) { return op.ends_with("/lit8"); }
bool is_unary(std::string_view op) {
  return op == "neg-int" || op == "not-int" || op.starts_with("int-to-");
}

// Straight-line `static (II)I` method: locals v0-v3, params p0/p1. The
// first two instructions set v0 and v1 from the parameters, so both are
// dead on entry. `plant` overwrites ops starting at `at`.
SmaliMethod synth_method(Rng& rng, const std::string& name, std::size_t length,
                         const std::vector<std::pair<std::size_t, std::vector<std::string>>>& plants) {
  const std::size_t body = length - 1;
  std::vector<std::string> ops(body);
  for (auto& op : ops) op = rng.pick(kFiller);
  for (const auto& [at, motif] : plants) {
    for (std::size_t i = 0; i < motif.size() && at + i < body; ++i) ops[at + i] = motif[i];
  }

  std::string text = ".method public static " + name + "(II)I\n    .registers 6\n\n";
  std::vector<std::string> readable = {"p0", "p1"};
  bool wrote[4] = {false, false, false, false};
  for (std::size_t i = 0; i < body; ++i) {
    int dst = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.below(4));
    const auto& op = ops[i];
    std::string a = rng.pick(readable);
    std::string line = "    " + op + " v" + std::to_string(dst) + ", " + a;
    if (is_lit8(op)) {
      line += ", 0x" + std::to_string(1 + rng.below(9));
    } else if (!is_unary(op)) {
      line += ", " + rng.pick(readable);
    }
    text += line + "\n";
    if (!wrote[dst]) {
      wrote[dst] = true;
      readable.push_back("v" + std::to_string(dst));
    }
  }
  text += "\n    return v0\n.end method\n";
  auto cls = parse_class(text);
  return cls.methods.at(0);
}

std::string class_text(const std::string& class_name, const std::string& source,
                       const std::vector<SmaliMethod>& methods) {
  std::string out = ".class public " + class_name + "\n.super Ljava/lang/Object;\n" +
                    ".source \"" + source + "\"\n\n\n# direct methods\n";
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (i) out += "\n";
    for (const auto& l : methods[i].lines) out += l.raw + "\n";
  }
  return out;
}

SmaliApp synth_app(Rng& rng, const std::string& id, std::size_t methods,
                   const MotifSpec& motif, bool plant_malware, bool plant_benign,
                   bool plant_fragments) {
  const std::size_t len = motif.instructions_per_method;
  const std::size_t body = len - 1;
  std::vector<std::vector<std::pair<std::size_t, std::vector<std::string>>>> plants(methods);
  std::vector<std::size_t> free(methods);
  std::iota(free.begin(), free.end(), 0);
  // Each motif gets a method of its own while any are left.
  auto place = [&](const std::vector<std::string>& ops, std::optional<std::size_t> at) {
    std::size_t host;
    if (!free.empty()) {
      auto k = rng.below(free.size());
      host = free[k];
      free.erase(free.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
      host = rng.below(methods);
    }
    std::size_t pos = at ? *at : rng.below(body - ops.size() + 1);
    plants[host].push_back({pos, ops});
  };

  if (plant_malware) {
    std::size_t at = 0;
    if (!rng.chance(motif.malware_motif_at_entry))
      at = 1 + rng.below(body - motif.malware.size());
    place(motif.malware, at);
  }
  if (plant_benign) place(motif.benign, std::nullopt);
  if (plant_fragments && motif.malware.size() > 1) {
    std::vector<std::string> head(motif.malware.begin(), motif.malware.end() - 1);
    std::vector<std::string> tail(motif.malware.begin() + 1, motif.malware.end());
    place(head, std::nullopt);
    place(tail, std::nullopt);
    // The motif as it looks once nops split it after the first op.
    auto gapped = motif.malware;
    for (std::size_t i = 0; i < motif.decoy_gap; ++i)
      gapped.insert(gapped.begin() + 1, rng.pick(kFiller));
    if (gapped.size() <= body) place(gapped, std::nullopt);
  }

  std::vector<SmaliMethod> all;
  for (std::size_t m = 0; m < methods; ++m) {
    std::ostringstream name;
    name << "calc" << m;
    all.push_back(synth_method(rng, name.str(), len, plants[m]));
  }

  SmaliApp app;
  app.id = id;
  const std::string pkg = "com/synth/" + id;
  const std::size_t half = (methods + 1) / 2;
  std::vector<SmaliMethod> core(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(half));
  std::vector<SmaliMethod> util(all.begin() + static_cast<std::ptrdiff_t>(half), all.end());
  for (auto [name, part] : {std::pair{"Core", &core}, std::pair{"Util", &util}}) {
    if (part->empty()) continue;
    auto cls = parse_class(class_text("L" + pkg + "/" + name + ";",
                                      std::string(name) + ".java", *part));
    cls.source_path = pkg + "/" + name + ".smali";
    app.classes.push_back(std::move(cls));
  }
  return app;
}

std::string app_id(Label label, std::size_t i) {
  std::ostringstream s;
  s << (label == Label::Malware ? "malware-" : "benign-") << std::setw(4)
    << std::setfill('0') << i;
  return s.str();
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(6) << std::fixed << x;
  return s.str();
}

}  // namespace

Corpus generate_corpus(std::uint64_t seed, std::size_t apps_per_class,
                       std::size_t methods_per_app, const MotifSpec& motif) {
  if (apps_per_class == 0) throw std::invalid_argument("empty corpus: apps_per_class is 0");
  if (methods_per_app == 0) throw std::invalid_argument("methods_per_app must be positive");
  if (motif.instructions_per_method < 2 + std::max(motif.malware.size(), motif.benign.size()))
    throw std::invalid_argument("methods too short for the motifs");
  Rng rng(seed);
  Corpus c;
  c.seed = seed;
  for (std::size_t i = 0; i < apps_per_class; ++i) {
    double roll = rng.unit();
    bool both = roll < motif.benign_with_both;
    bool benign_only = !both && roll < motif.benign_with_both + motif.benign_with_benign_motif;
    c.apps.push_back({synth_app(rng, app_id(Label::Benign, i), methods_per_app, motif,
                                both, both || benign_only, motif.fragments),
                      Label::Benign});
    c.apps.push_back({synth_app(rng, app_id(Label::Malware, i), methods_per_app, motif,
                                true, false, motif.fragments),
                      Label::Malware});
  }
  return c;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  for (const auto& a : corpus.apps) {
    auto sub = a.label == Label::Malware ? "malware" : "benign";
    write_app(a.app, dir / sub / a.app.id);
  }
  std::ofstream meta(dir / "corpus.json");
  meta << nlohmann::json{{"seed", corpus.seed}, {"apps", corpus.apps.size()}}.dump(2) << '\n';
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  if (std::filesystem::exists(dir / "corpus.json")) {
    std::ifstream meta(dir / "corpus.json");
    c.seed = nlohmann::json::parse(meta).value("seed", std::uint64_t{0});
  }
  for (auto [sub, label] : {std::pair{"benign", Label::Benign}, std::pair{"malware", Label::Malware}}) {
    auto root = dir / sub;
    if (!std::filesystem::is_directory(root)) continue;
    std::vector<std::filesystem::path> apps;
    for (const auto& e : std::filesystem::directory_iterator(root))
      if (e.is_directory()) apps.push_back(e.path());
    std::sort(apps.begin(), apps.end());
    for (const auto& p : apps) c.apps.push_back({load_app(p), label});
  }
  if (c.apps.empty()) throw std::invalid_argument("no apps under " + dir.string());
  return c;
}

std::string generate_smali_file(std::uint64_t seed) {
  Rng rng(seed);
  std::ostringstream o;
  const std::string cls = "Lorg/gen/K" + std::to_string(seed) + ";";
  if (rng.chance(0.9)) o << ".class " << (rng.chance(0.5) ? "public " : "") << cls << "\n";
  o << ".super Ljava/lang/Object;\n";
  if (rng.chance(0.7)) o << ".source \"K" << seed << ".java\"\n";
  if (rng.chance(0.3)) o << ".implements Ljava/lang/Runnable;\n";
  o << "\n";
  if (rng.chance(0.5)) {
    o << ".annotation system Ldalvik/annotation/MemberClasses;\n"
      << "    value = {\n        " << cls << "\n    }\n.end annotation\n\n";
  }
  o << "# static fields\n";
  const std::size_t fields = rng.below(4);
  for (std::size_t f = 0; f < fields; ++f)
    o << ".field private static final F" << f << ":I = 0x" << rng.below(255) << "\n";
  if (rng.chance(0.5)) o << "\n.field public name:Ljava/lang/String;\n";
  o << "\n";

  if (rng.chance(0.5)) {
    o << "# direct methods\n.method public constructor <init>()V\n    .locals 0\n\n"
      << "    .prologue\n    .line 3\n"
      << "    invoke-direct {p0}, Ljava/lang/Object;-><init>()V\n\n    return-void\n.end method\n\n";
  }
  std::size_t methods = 1 + rng.below(5);
  for (std::size_t m = 0; m < methods; ++m) {
    switch (rng.below(6)) {
      case 0:
        o << ".method public abstract run" << m << "()V\n.end method\n";
        break;
      case 1:
        o << ".method public static sw" << m << "(I)I\n    .locals 1\n"
          << "    .param p0, \"x\"    # I\n\n"
          << "    packed-switch p0, :pswitch_data_0\n\n    const/4 v0, -0x1\n\n"
          << "    :goto_0\n    return v0\n\n    :pswitch_0\n    const/4 v0, 0x7\n"
          << "    goto :goto_0\n\n    nop\n\n    :pswitch_data_0\n"
          << "    .packed-switch 0x0\n        :pswitch_0\n    .end packed-switch\n"
          << ".end method\n";
        break;
      case 2:
        o << ".method static arr" << m << "()[I\n    .registers 2\n\n"
          << "    const/4 v0, 0x3\n    new-array v0, v0, [I\n"
          << "    fill-array-data v0, :array_0\n    return-object v0\n\n"
          << "    :array_0\n    .array-data 4\n        0x1\n        0x2\n        0x3\n"
          << "    .end array-data\n.end method\n";
        break;
      case 3:
        o << ".method private tryIt" << m << "(Ljava/lang/String;)V\n    .locals 2\n"
          << "    .annotation system Ldalvik/annotation/Throws;\n"
          << "        value = {\n            Ljava/io/IOException;\n        }\n"
          << "    .end annotation\n\n"
          << "    :try_start_0\n    const-string v0, \"a # not a comment\"\n"
          << "    invoke-static {v0, p1}, Landroid/util/Log;->d(Ljava/lang/String;Ljava/lang/String;)I\n"
          << "    :try_end_0\n    .catch Ljava/lang/Exception; {:try_start_0 .. :try_end_0} :catch_0\n\n"
          << "    :goto_0\n    return-void\n\n    :catch_0\n    move-exception v1\n"
          << "    .local v1, \"e\":Ljava/lang/Exception;\n    goto :goto_0\n.end method\n";
        break;
      case 4:
        o << ".method public static sum" << m << "(II)I\n    .registers " << 3 + rng.below(4) << "\n"
          << "\t# tab-indented comment   \n"
          << "    add-int v0, p0, p1   # trailing\n"
          << "    weird-opcode v0, v0\n"
          << "    if-lez v0, :cond_" << m << "\n    mul-int/lit8 v0, v0, 0x2\n"
          << "    :cond_" << m << "\n    return v0\n.end method\n";
        break;
      default:
        o << ".method public wide" << m << "(JD)J\n    .locals 2\n"
          << "    .sparse-switch\n        0x1 -> :a\n    .end sparse-switch\n"
          << "    move-wide/from16 v0, p1\n    long-to-int v0, v0\n"
          << "    invoke-virtual/range {p0 .. p4}, " << cls << "->x(JD)V\n"
          << "    return-wide v0\n.end method\n";
        break;
    }
    const std::size_t blanks = rng.below(3);
    for (std::size_t b = 0; b < blanks; ++b) o << (rng.chance(0.5) ? "\n" : "   \n");
  }
  return o.str();
}

Split split_corpus(std::size_t n, std::uint64_t seed, double train_fraction) {
  if (train_fraction <= 0 || train_fraction >= 1)
    throw std::invalid_argument("train_fraction must be in (0,1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 g(seed ^ 0x5eed5eedULL);
  std::shuffle(idx.begin(), idx.end(), g);
  auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  return s;
}

std::vector<Example> to_examples(std::span<const CorpusApp> apps,
                                 const OpcodeTable& table, std::size_t max_len) {
  std::vector<Example> out;
  for (const auto& a : apps)
    out.push_back({extract_opcode_sequence(a.app.classes, table, max_len, a.app.id).ids, a.label});
  return out;
}

MetricsRow metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn,
                               std::size_t fn) {
  MetricsRow r{tp, fp, tn, fn};
  auto total = tp + fp + tn + fn;
  if (total == 0) throw std::invalid_argument("empty corpus");
  auto d = [](std::size_t a) { return static_cast<double>(a); };
  r.accuracy = d(tp + tn) / d(total);
  if (tp + fp > 0) r.precision = d(tp) / d(tp + fp); else r.degenerate = true;
  if (tp + fn > 0) r.recall = d(tp) / d(tp + fn); else r.degenerate = true;
  if (r.precision + r.recall > 0)
    r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  else
    r.degenerate = true;
  return r;
}

MetricsRow evaluate(const DetectorModel& model, std::span<const Example> corpus,
                    double threshold) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (const auto& ex : corpus) {
    bool predicted = classify(model, ex.ids, threshold) == Label::Malware;
    bool actual = ex.label == Label::Malware;
    if (predicted && actual) ++tp;
    else if (predicted) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, tn, fn);
}

AttackExperiment run_attack_experiment(const DetectorModel& model,
                                       std::span<const CorpusApp> test,
                                       AttackKind kind,
                                       const AttackOptions& options) {
  if (test.empty()) throw std::invalid_argument("empty corpus");
  const auto& table = OpcodeTable::dalvik();
  const auto max_len = model.config.max_len;
  const auto candidates = injectable_ids(table);
  AttackExperiment e;
  e.kind = kind;
  e.payload_length = kind == AttackKind::SimpleNop ? 0 : options.payload_length;

  std::vector<Example> clean;
  std::vector<Example> attacked;
  std::vector<double> c1, c2, c3, cc;
  for (const auto& a : test) {
    auto seq = extract_opcode_sequence(a.app.classes, table, max_len, a.app.id).ids;
    clean.push_back({seq, a.label});
    if (a.label != Label::Malware) {
      attacked.push_back({seq, a.label});
      continue;
    }
    AppAttack rec;
    rec.app_id = a.app.id;
    rec.score_before = forward(model, seq).p_malware;
    std::vector<OpcodeId> after = seq;
    InjectionManifest manifest;
    try {
      if (kind == AttackKind::SimpleNop) {
        InjectionPlan plan;
        plan.variant.kind = AttackKind::SimpleNop;
        plan.variant.nop_count = options.nop_count;
        plan.selector.horizon = max_len;
        auto r = apply_attack(a.app.classes, plan, a.app.id);
        after = extract_opcode_sequence(r.app, table, max_len).ids;
        manifest = std::move(r.manifest);
        rec.skipped = r.skips.size();
      } else {
        auto tmpl = build_attack_template(a.app.classes, kind, table, max_len,
                                          options.payload_length, a.app.id);
        auto opt = optimize_placeholders(model, tmpl, candidates, options.threshold,
                                         options.budget);
        auto real = realize(a.app.classes, tmpl, opt.assignment, table, {}, a.app.id);
        after = extract_opcode_sequence(real.app, table, max_len).ids;
        manifest = std::move(real.manifest);
        rec.skipped = tmpl.skipped.size() + real.skips.size();
      }
    } catch (const EmptyManifestError&) {
    } catch (const EmptyTemplateError&) {
    }
    rec.sites = manifest.sites.size();
    rec.score_after = forward(model, after).p_malware;
    if (!manifest.sites.empty()) {
      rec.ccc = ccc(manifest, options.weights);
      c1.push_back(rec.ccc.c1);
      c2.push_back(rec.ccc.c2);
      c3.push_back(rec.ccc.c3);
      cc.push_back(rec.ccc.ccc);
    }
    attacked.push_back({std::move(after), a.label});
    e.apps.push_back(std::move(rec));
  }
  e.clean = evaluate(model, clean, options.threshold);
  e.attacked = evaluate(model, attacked, options.threshold);
  e.mean_ccc.weights = options.weights;
  e.mean_ccc.c1 = mean(c1);
  e.mean_ccc.c2 = mean(c2);
  e.mean_ccc.c3 = mean(c3);
  e.mean_ccc.ccc = mean(cc);
  return e;
}

std::vector<SweepRow> run_sweep(const DetectorModel& model,
                                std::span<const CorpusApp> test,
                                std::span<const std::size_t> lengths,
                                const AttackOptions& options) {
  for (std::size_t i = 1; i < lengths.size(); ++i) {
    if (lengths[i] <= lengths[i - 1])
      throw std::invalid_argument("sweep lengths must be strictly increasing");
  }
  std::vector<SweepRow> rows;
  for (auto len : lengths) {
    auto opts = options;
    opts.payload_length = len;
    auto e = run_attack_experiment(model, test, AttackKind::Sio, opts);
    rows.push_back({len, e.mean_ccc.ccc, e.attacked.recall});
  }
  return rows;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) return std::nullopt;
  auto rx = ranks(x);
  auto ry = ranks(y);
  double mx = mean(rx), my = mean(ry);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

PipelineReport run_pipeline(const PipelineConfig& config) {
  auto start = std::chrono::steady_clock::now();
  const auto& table = OpcodeTable::dalvik();
  PipelineReport r;
  r.seed = config.seed;
  auto corpus = generate_corpus(config.seed, config.apps_per_class,
                                config.methods_per_app, config.motif);
  auto split = split_corpus(corpus.apps.size(), config.seed);
  std::vector<CorpusApp> train_apps, test_apps;
  for (auto i : split.train) train_apps.push_back(corpus.apps[i]);
  for (auto i : split.test) test_apps.push_back(corpus.apps[i]);

  auto dcfg = config.detector;
  dcfg.seed = config.seed;
  auto topts = config.train;
  topts.seed = config.seed;
  auto train_ex = to_examples(train_apps, table, dcfg.max_len);
  auto test_ex = to_examples(test_apps, table, dcfg.max_len);
  auto model = train(init_model(dcfg), train_ex, topts);
  r.train = evaluate(model, train_ex, config.attack.threshold);
  r.test = evaluate(model, test_ex, config.attack.threshold);

  for (auto kind : {AttackKind::SimpleNop, AttackKind::Sio, AttackKind::Imi})
    r.attacks.push_back(run_attack_experiment(model, test_apps, kind, config.attack));
  r.sweep = run_sweep(model, test_apps, config.sweep_lengths, config.attack);
  std::vector<double> xs, ys;
  for (const auto& row : r.sweep) {
    xs.push_back(static_cast<double>(row.injected_length));
    ys.push_back(row.recall);
  }
  r.sweep_spearman = spearman(xs, ys);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string metrics_csv(const PipelineReport& report) {
  std::ostringstream o;
  o << "# nopvis metrics v" << kCsvSchemaVersion << " seed=" << report.seed << "\n";
  o << "split,attack,payload_length,accuracy,precision,recall,f1,tp,fp,tn,fn,degenerate,"
       "c1,c2,c3,ccc\n";
  auto row = [&](const char* split, std::string_view attack, std::size_t len,
                 const MetricsRow& m, const CccReport* c) {
    o << split << ',' << attack << ',' << len << ',' << fmt(m.accuracy) << ','
      << fmt(m.precision) << ',' << fmt(m.recall) << ',' << fmt(m.f1) << ',' << m.tp << ','
      << m.fp << ',' << m.tn << ',' << m.fn << ',' << (m.degenerate ? 1 : 0);
    if (c) {
      o << ',' << fmt(c->c1) << ',' << fmt(c->c2) << ',' << fmt(c->c3) << ',' << fmt(c->ccc);
    } else {
      o << ",,,,";
    }
    o << '\n';
  };
  row("train", "none", 0, report.train, nullptr);
  row("test", "none", 0, report.test, nullptr);
  for (const auto& e : report.attacks)
    row("test", to_string(e.kind), e.payload_length, e.attacked, &e.mean_ccc);
  return o.str();
}

std::string sweep_csv(std::span<const SweepRow> rows, std::uint64_t seed) {
  std::ostringstream o;
  o << "# nopvis sweep v" << kCsvSchemaVersion << " seed=" << seed << "\n";
  o << "injected_length,mean_ccc,recall\n";
  for (const auto& r : rows)
    o << r.injected_length << ',' << fmt(r.mean_ccc) << ',' << fmt(r.recall) << '\n';
  return o.str();
}

nlohmann::json to_json(const MetricsRow& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1},             {"tp", m.tp},               {"fp", m.fp},
          {"tn", m.tn},             {"fn", m.fn},               {"degenerate", m.degenerate}};
}

nlohmann::json to_json(const AttackExperiment& e) {
  nlohmann::json apps = nlohmann::json::array();
  for (const auto& a : e.apps) {
    apps.push_back({{"app_id", a.app_id},
                    {"score_before", a.score_before},
                    {"score_after", a.score_after},
                    {"sites", a.sites},
                    {"skipped", a.skipped},
                    {"ccc", to_json(a.ccc)}});
  }
  return {{"attack", to_string(e.kind)},
          {"payload_length", e.payload_length},
          {"clean", to_json(e.clean)},
          {"attacked", to_json(e.attacked)},
          {"mean_ccc", to_json(e.mean_ccc)},
          {"apps", apps}};
}

nlohmann::json to_json(const SweepRow& r) {
  return {{"injected_length", r.injected_length}, {"mean_ccc", r.mean_ccc}, {"recall", r.recall}};
}

nlohmann::json to_json(const PipelineReport& r) {
  nlohmann::json attacks = nlohmann::json::array();
  for (const auto& e : r.attacks) attacks.push_back(to_json(e));
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& s : r.sweep) sweep.push_back(to_json(s));
  return {{"schema_version", kCsvSchemaVersion},
          {"seed", r.seed},
          {"train", to_json(r.train)},
          {"test", to_json(r.test)},
          {"attacks", attacks},
          {"sweep", sweep},
          {"sweep_spearman", r.sweep_spearman ? nlohmann::json(*r.sweep_spearman)
                                              : nlohmann::json(nullptr)},
          {"seconds", r.seconds}};
}

}  // namespace nopvis
