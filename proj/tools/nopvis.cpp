// nopvis: command-line front end.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 bad input, 3 degenerate metrics.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "nopvis/attack.hpp"
#include "nopvis/ccc.hpp"
#include "nopvis/detector.hpp"
#include "nopvis/harness.hpp"
#include "nopvis/injector.hpp"
#include "nopvis/interpreter.hpp"
#include "nopvis/smali.hpp"

namespace fs = std::filesystem;
using namespace nopvis;
using nlohmann::json;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitDegenerate = 3;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 7;
  std::string out;
  std::string format = "json";
  double threshold = 0.5;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& p) {
  try {
    return json::parse(slurp(p));
  } catch (const json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

// Writes to --out when given, stdout otherwise.
void emit(const Globals& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  if (auto parent = fs::path(g.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream o(g.out);
  if (!o) throw InputError("cannot write " + g.out);
  o << text;
}

std::vector<SmaliClass> load_classes(const fs::path& p) {
  if (fs::is_directory(p)) return load_app(p).classes;
  if (!fs::exists(p)) throw InputError("no such file or directory: " + p.string());
  auto cls = parse_class(slurp(p));
  cls.source_path = p.filename().string();
  return {cls};
}

DetectorModel load_model(const fs::path& p) {
  try {
    return model_from_json(read_json(p));
  } catch (const std::invalid_argument& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

std::vector<CorpusApp> select(const Corpus& c, const std::string& split, std::uint64_t seed) {
  if (split == "all") return c.apps;
  auto s = split_corpus(c.apps.size(), seed);
  std::vector<CorpusApp> out;
  for (auto i : split == "train" ? s.train : s.test) out.push_back(c.apps[i]);
  return out;
}

std::string metrics_row_csv(const std::string& name, const MetricsRow& m) {
  std::ostringstream o;
  o << name << ',' << m.accuracy << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ','
    << m.tp << ',' << m.fp << ',' << m.tn << ',' << m.fn << ',' << (m.degenerate ? 1 : 0) << '\n';
  return o.str();
}

const char* kMetricsHeader = "split,accuracy,precision,recall,f1,tp,fp,tn,fn,degenerate\n";

std::string csv_preamble(const Globals& g, const char* what) {
  return std::string("# nopvis ") + what + " v" + std::to_string(kCsvSchemaVersion) +
         " seed=" + std::to_string(g.seed) + "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nopvis: Smali injection, CCC visibility metric and evasion harness"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--out", g.out, "output file or directory");
  app.add_option("--format", g.format, "output format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  app.add_option("--threshold", g.threshold, "malware decision threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();

  // parse
  auto* parse = app.add_subcommand("parse", "parse a .smali file and summarize it");
  std::string parse_in;
  bool emit_smali = false;
  parse->add_option("file", parse_in)->required();
  parse->add_flag("--serialize", emit_smali, "print the re-serialized source instead");

  // extract
  auto* extract = app.add_subcommand("extract", "opcode id sequence of an app or file");
  std::string extract_in;
  std::size_t extract_len = kDefaultMaxLen;
  extract->add_option("input", extract_in)->required();
  extract->add_option("--max-len", extract_len)->capture_default_str();

  // inject
  auto* inject = app.add_subcommand("inject", "inject an attack into an app or file");
  std::string inject_in, variant = "nop", payload = "sub-int,xor-int";
  int nops = 3;
  std::size_t horizon = kDefaultMaxLen;
  inject->add_option("input", inject_in)->required();
  inject->add_option("--variant", variant)
      ->check(CLI::IsMember({"nop", "sio", "imi"}))
      ->capture_default_str();
  inject->add_option("--payload", payload, "comma-separated payload opcodes")
      ->capture_default_str();
  inject->add_option("--nops", nops)->capture_default_str();
  inject->add_option("--horizon", horizon)->capture_default_str();

  // ccc
  auto* cccc = app.add_subcommand("ccc", "compute the CCC metric of a manifest");
  std::string manifest_path;
  CccWeights weights;
  cccc->add_option("--manifest", manifest_path)->required();
  cccc->add_option("--w1", weights.w1)->capture_default_str();
  cccc->add_option("--w2", weights.w2)->capture_default_str();
  cccc->add_option("--w3", weights.w3)->capture_default_str();

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic labelled corpus");
  std::size_t per_class = 300, methods = 12;
  gen->add_option("--apps-per-class", per_class)->capture_default_str();
  gen->add_option("--methods", methods)->capture_default_str();

  // train
  auto* trn = app.add_subcommand("train", "train the opcode CNN on a corpus");
  std::string corpus_dir;
  TrainOptions topt;
  DetectorConfig dcfg;
  dcfg.max_len = 1024;
  trn->add_option("--corpus", corpus_dir)->required();
  trn->add_option("--epochs", topt.epochs)->capture_default_str();
  trn->add_option("--lr", topt.learning_rate)->capture_default_str();
  trn->add_option("--batch", topt.batch_size)->capture_default_str();
  trn->add_option("--max-len", dcfg.max_len)->capture_default_str();

  // eval / attack / sweep share corpus + model
  std::string model_path, split = "test";
  auto add_eval_inputs = [&](CLI::App* sub) {
    sub->add_option("--corpus", corpus_dir)->required();
    sub->add_option("--model", model_path)->required();
    sub->add_option("--split", split, "train, test or all")
        ->check(CLI::IsMember({"train", "test", "all"}))
        ->capture_default_str();
  };
  auto* eval = app.add_subcommand("eval", "detector metrics on a corpus");
  add_eval_inputs(eval);

  auto* atk = app.add_subcommand("attack", "attack every malware app and re-score");
  AttackOptions aopt;
  add_eval_inputs(atk);
  atk->add_option("--variant", variant)
      ->check(CLI::IsMember({"nop", "sio", "imi"}))
      ->capture_default_str();
  atk->add_option("--payload-length", aopt.payload_length)->capture_default_str();
  atk->add_option("--budget", aopt.budget, "greedy sweeps")->capture_default_str();

  auto* swp = app.add_subcommand("sweep", "SIO payload-length sweep");
  std::string lengths = "2,4,8,16";
  add_eval_inputs(swp);
  swp->add_option("--lengths", lengths)->capture_default_str();

  // verify
  auto* verify = app.add_subcommand("verify", "check two files for method-wise equivalence");
  std::string verify_a, verify_b;
  std::size_t trials = 1000;
  verify->add_option("original", verify_a)->required();
  verify->add_option("modified", verify_b)->required();
  verify->add_option("--trials", trials)->capture_default_str();

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "generate, train, attack and sweep in one run");
  PipelineConfig pcfg;
  pipe->add_option("--apps-per-class", pcfg.apps_per_class)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  const auto& table = OpcodeTable::dalvik();
  try {
    if (*parse) {
      auto text = slurp(parse_in);
      auto cls = parse_class(text);
      if (emit_smali) {
        emit(g, serialize_class(cls));
        return 0;
      }
      json methods = json::array();
      for (const auto& m : cls.methods)
        methods.push_back({{"name", m.name},
                           {"descriptor", m.descriptor},
                           {"instructions", m.instruction_count()},
                           {"registers", m.registers_declared()}});
      json j = {{"class", cls.class_name},
                {"super", cls.super_name},
                {"lines", cls.line_count()},
                {"methods", methods},
                {"issues", validate_class(cls)}};
      emit(g, j.dump(2));
      return 0;
    }

    if (*extract) {
      auto seq = extract_opcode_sequence(load_classes(extract_in), table, extract_len,
                                         fs::path(extract_in).filename().string());
      if (g.format == "csv") {
        std::ostringstream o;
        o << csv_preamble(g, "opcodes") << "position,id,mnemonic\n";
        for (std::size_t i = 0; i < seq.ids.size(); ++i) {
          auto name = table.mnemonic_of(seq.ids[i]);
          o << i << ',' << seq.ids[i] << ','
            << (name ? std::string(*name) : seq.ids[i] == kPaddingOpcodeId ? "<pad>" : "<unk>")
            << '\n';
        }
        emit(g, o.str());
      } else {
        emit(g, json{{"app", seq.app_id}, {"max_len", seq.max_len}, {"ids", seq.ids}}.dump());
      }
      return 0;
    }

    if (*inject) {
      if (g.out.empty()) throw InputError("inject needs --out <dir>");
      auto classes = load_classes(inject_in);
      InjectionPlan plan;
      plan.variant.kind = attack_kind_from_string(variant);
      plan.variant.payload = split_list(payload);
      plan.variant.nop_count = nops;
      plan.selector.horizon = horizon;
      plan.seed = g.seed;
      auto id = fs::path(inject_in).filename().string();
      AttackResult r;
      try {
        r = apply_attack(classes, plan, id);
      } catch (const EmptyManifestError& e) {
        throw InputError(e.what());
      }
      SmaliApp out{id, r.app};
      write_app(out, g.out);
      json skips = json::array();
      for (const auto& s : r.skips) skips.push_back(to_json(s));
      auto j = to_json(r.manifest);
      j["skipped"] = skips;
      std::ofstream(fs::path(g.out) / "manifest.json") << j.dump(2) << '\n';
      std::cout << json{{"sites", r.manifest.sites.size()}, {"skipped", r.skips.size()}}.dump()
                << '\n';
      return 0;
    }

    if (*cccc) {
      InjectionManifest m;
      try {
        m = manifest_from_json(read_json(manifest_path));
      } catch (const json::exception& e) {
        throw InputError(manifest_path + ": " + e.what());
      }
      CccReport r;
      try {
        r = ccc(m, weights);
      } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
      } catch (const UndefinedMetricError& e) {
        throw InputError(e.what());
      }
      if (g.format == "csv") {
        std::ostringstream o;
        o << csv_preamble(g, "ccc") << "c1,c2,c3,ccc\n"
          << r.c1 << ',' << r.c2 << ',' << r.c3 << ',' << r.ccc << '\n';
        emit(g, o.str());
      } else {
        emit(g, to_json(r).dump(2));
      }
      return 0;
    }

    if (*gen) {
      if (g.out.empty()) throw InputError("gen-corpus needs --out <dir>");
      auto c = generate_corpus(g.seed, per_class, methods);
      write_corpus(c, g.out);
      std::cout << json{{"apps", c.apps.size()}, {"dir", g.out}}.dump() << '\n';
      return 0;
    }

    if (*trn) {
      if (g.out.empty()) throw InputError("train needs --out <model.json>");
      auto corpus = load_corpus(corpus_dir);
      auto apps = select(corpus, "train", g.seed);
      dcfg.seed = g.seed;
      topt.seed = g.seed;
      topt.track_loss = true;
      auto examples = to_examples(apps, table, dcfg.max_len);
      TrainReport rep;
      auto model = train(init_model(dcfg), examples, topt, &rep);
      auto m = evaluate(model, examples, g.threshold);
      emit(g, to_json(model).dump());
      std::cerr << json{{"train", to_json(m)}, {"epoch_loss", rep.epoch_loss}}.dump() << '\n';
      return 0;
    }

    if (*eval || *atk || *swp) {
      auto corpus = load_corpus(corpus_dir);
      auto model = load_model(model_path);
      auto apps = select(corpus, split, g.seed);
      aopt.threshold = g.threshold;

      if (*eval) {
        auto m = evaluate(model, to_examples(apps, table, model.config.max_len), g.threshold);
        emit(g, g.format == "csv" ? csv_preamble(g, "metrics") + kMetricsHeader +
                                        metrics_row_csv(split, m)
                                  : to_json(m).dump(2));
        return m.degenerate ? kExitDegenerate : 0;
      }
      if (*atk) {
        auto e = run_attack_experiment(model, apps, attack_kind_from_string(variant), aopt);
        if (g.format == "csv") {
          std::ostringstream o;
          o << csv_preamble(g, "attack") << kMetricsHeader << metrics_row_csv("clean", e.clean)
            << metrics_row_csv(std::string(to_string(e.kind)), e.attacked);
          emit(g, o.str());
        } else {
          emit(g, to_json(e).dump(2));
        }
        return e.clean.degenerate || e.attacked.degenerate ? kExitDegenerate : 0;
      }
      std::vector<std::size_t> ls;
      for (const auto& s : split_list(lengths)) {
        try {
          ls.push_back(std::stoul(s));
        } catch (const std::exception&) {
          throw InputError("bad length '" + s + "'");
        }
      }
      auto rows = run_sweep(model, apps, ls, aopt);
      std::vector<double> xs, ys;
      for (const auto& r : rows) {
        xs.push_back(static_cast<double>(r.injected_length));
        ys.push_back(r.recall);
      }
      auto rho = spearman(xs, ys);
      if (g.format == "csv") {
        emit(g, sweep_csv(rows, g.seed));
      } else {
        json jr = json::array();
        for (const auto& r : rows) jr.push_back(to_json(r));
        emit(g, json{{"seed", g.seed}, {"rows", jr}, {"spearman", rho ? json(*rho) : json()}}
                    .dump(2));
      }
      return rho ? 0 : kExitDegenerate;
    }

    if (*verify) {
      auto a = load_classes(verify_a);
      auto b = load_classes(verify_b);
      json results = json::array();
      bool all_equal = true;
      for (std::size_t c = 0; c < std::min(a.size(), b.size()); ++c) {
        for (const auto& mb : b[c].methods) {
          auto it = std::find_if(a[c].methods.begin(), a[c].methods.end(),
                                 [&](const SmaliMethod& m) { return m.signature() == mb.signature(); });
          if (it == a[c].methods.end()) continue;
          auto r = check_equivalence(*it, mb, trials, g.seed);
          all_equal &= r.verdict == Verdict::Equal;
          json row = {{"method", mb.signature()},
                      {"verdict", to_string(r.verdict)},
                      {"cases", r.cases}};
          if (r.verdict == Verdict::NotEqual) {
            row["witness"] = r.witness;
            row["original"] = r.original_outcome;
            row["modified"] = r.modified_outcome;
          }
          if (!r.reason.empty()) row["reason"] = r.reason;
          results.push_back(row);
        }
      }
      emit(g, results.dump(2));
      return all_equal ? 0 : 1;
    }

    if (*pipe) {
      pcfg.seed = g.seed;
      pcfg.attack.threshold = g.threshold;
      auto r = run_pipeline(pcfg);
      emit(g, g.format == "csv" ? metrics_csv(r) + sweep_csv(r.sweep, r.seed)
                                : to_json(r).dump(2));
      return 0;
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const SmaliParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
