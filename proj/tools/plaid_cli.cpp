// plaid: train / eval / sample / guide / scaling-fit / tokenize
//
// Exit codes: 0 success, 1 runtime failure, 2 bad configuration or flags.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "plaid/plaid.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;

    plaid::RunConfig load() const {
        plaid::RunConfig cfg;
        if (!config_path.empty()) cfg.load_text(plaid::read_file(config_path));
        for (const auto& kv : overrides) cfg.apply_override(kv);
        return cfg;
    }
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "key=value configuration file");
    cmd->add_option("--set", flags.overrides, "override, key=value (repeatable)");
}

plaid::DenoiserConfig denoiser_config(const plaid::RunConfig& cfg, int vocab, int seq_len) {
    plaid::DenoiserConfig dc;
    dc.depth = cfg.get_int("model.depth");
    dc.width = cfg.get_int("model.width");
    dc.heads = cfg.get_int("model.heads");
    dc.embed_dim = cfg.get_int("model.embed_dim");
    dc.time_enc_dim = cfg.get_int("model.time_enc_dim");
    dc.vocab = vocab;
    dc.max_seq_len = std::max(cfg.get_int("model.max_seq_len"), seq_len);
    dc.validate();
    return dc;
}

plaid::TrainConfig train_config(const plaid::RunConfig& cfg) {
    plaid::TrainConfig tc;
    tc.base_lr = cfg.get_real("train.base_lr");
    tc.warmup_steps = cfg.get_int("train.warmup_steps");
    tc.total_steps = cfg.get_int("train.total_steps");
    tc.batch_size = cfg.get_int("train.batch_size");
    tc.seq_len = cfg.get_int("train.seq_len");
    tc.truncate_frac = cfg.get_real("train.truncate_frac");
    tc.seed = cfg.get_u64("train.seed");
    tc.wd_coeff = cfg.get_real("train.wd_coeff");
    tc.grad_clip = cfg.get_real("train.grad_clip");
    tc.disable_output_prior = cfg.get_int("train.disable_output_prior") != 0;
    tc.validate();
    return tc;
}

std::string escape_line(const std::string& text) {
    std::string out;
    for (char c : text) {
        if (c == '\\')
            out += "\\\\";
        else if (c == '\n')
            out += "\\n";
        else if (c == '\r')
            out += "\\r";
        else
            out += c;
    }
    return out;
}

json spec_to_json(const plaid::GuidanceSpec& spec) {
    json terms = json::array();
    for (const auto& t : spec.terms) {
        json j;
        j["kind"] = t.kind == plaid::GuidanceTerm::Kind::Span ? "span" : "lexical";
        j["weight"] = t.weight;
        j["negated"] = t.negated;
        if (t.kind == plaid::GuidanceTerm::Kind::Span) {
            j["start"] = t.start;
            j["end"] = t.end;
            j["tokens"] = t.span_tokens;
        } else {
            j["token"] = t.lexical_token;
        }
        terms.push_back(j);
    }
    return terms;
}

plaid::GuidanceSpec spec_from_json(const json& terms, const plaid::Vocabulary& vocab) {
    plaid::GuidanceSpec spec;
    for (const auto& j : terms) {
        plaid::GuidanceTerm t;
        t.weight = j.value("weight", 1.0);
        t.negated = j.value("negated", false);
        if (j.at("kind") == "span") {
            t.kind = plaid::GuidanceTerm::Kind::Span;
            t.start = j.at("start").get<int>();
            if (j.contains("tokens"))
                t.span_tokens = j.at("tokens").get<std::vector<int>>();
            else
                t.span_tokens = vocab.encode(j.at("text").get<std::string>());
            t.end = t.start + static_cast<int>(t.span_tokens.size());
        } else {
            t.kind = plaid::GuidanceTerm::Kind::Lexical;
            if (j.contains("token"))
                t.lexical_token = j.at("token").get<int>();
            else {
                const auto ids = vocab.encode(j.at("text").get<std::string>());
                plaid::require(ids.size() == 1, "guidance: lexical text must be one token");
                t.lexical_token = ids[0];
            }
        }
        spec.terms.push_back(t);
    }
    return spec;
}

// --span "start:end:text" (text fixes the actual length), --lexical "text"
// (single token under the vocabulary), --negate flips the lexical terms.
plaid::GuidanceSpec spec_from_flags(const std::vector<std::string>& spans,
                                    const std::vector<std::string>& lexicals, bool negate,
                                    const plaid::Vocabulary& vocab) {
    plaid::GuidanceSpec spec;
    for (const auto& s : spans) {
        const auto c1 = s.find(':');
        const auto c2 = s.find(':', c1 == std::string::npos ? c1 : c1 + 1);
        plaid::require(c1 != std::string::npos && c2 != std::string::npos,
                       "span flag must be start:end:text");
        plaid::GuidanceTerm t;
        t.kind = plaid::GuidanceTerm::Kind::Span;
        t.start = std::stoi(s.substr(0, c1));
        t.span_tokens = vocab.encode(s.substr(c2 + 1));
        t.end = t.start + static_cast<int>(t.span_tokens.size());
        spec.terms.push_back(t);
    }
    for (const auto& text : lexicals) {
        const auto ids = vocab.encode(text);
        plaid::require(ids.size() == 1, "lexical flag must encode to exactly one token");
        plaid::GuidanceTerm t;
        t.kind = plaid::GuidanceTerm::Kind::Lexical;
        t.lexical_token = ids[0];
        t.negated = negate;
        spec.terms.push_back(t);
    }
    return spec;
}

std::vector<plaid::BatchItem> split_sequences(const plaid::PackedDataset& ds, bool val,
                                              int max_sequences) {
    const long long n = val ? ds.n_val() : ds.n_train();
    plaid::require(n > 0, val ? "dataset has no validation split" : "dataset has no train split");
    std::vector<plaid::BatchItem> out;
    for (long long i = 0; i < n; ++i) {
        if (max_sequences > 0 && i >= max_sequences) break;
        out.emplace_back(ds.seq(val, i));
    }
    return out;
}

template <class Real>
int run_train(const plaid::RunConfig& cfg, const std::string& data_path,
              const std::string& vocab_path, const std::string& resume_path,
              const std::string& out_dir) {
    const auto ds = plaid::deserialize_dataset(plaid::read_file(data_path));
    fs::create_directories(out_dir);

    plaid::TrainState<Real> st;
    plaid::Vocabulary vocab;
    if (!resume_path.empty()) {
        std::tie(st, vocab) = plaid::deserialize_checkpoint<Real>(plaid::read_file(resume_path));
    } else {
        plaid::require(!vocab_path.empty(), "train: --vocab is required unless resuming");
        const std::string vocab_bytes = plaid::read_file(vocab_path);
        plaid::detail::ByteReader rd(vocab_bytes);
        vocab = plaid::deserialize_vocab(rd);
        const auto tc = train_config(cfg);
        plaid::require(tc.seq_len == ds.seq_len, "train.seq_len must match the dataset");
        st = plaid::TrainState<Real>::init(
            tc, denoiser_config(cfg, ds.vocab_size, ds.seq_len), cfg.get_int("model.sched_units"));
    }

    std::ofstream log(out_dir + "/metrics.jsonl", std::ios::app);
    {
        json header;
        header["effective_config"] = cfg.dump();
        header["resume"] = !resume_path.empty();
        header["start_step"] = st.step;
        log << header.dump() << "\n";
    }

    const int checkpoint_every = cfg.get_int("train.checkpoint_every");
    while (st.step < st.cfg.total_steps) {
        std::vector<plaid::BatchItem> batch;
        for (int i = 0; i < st.cfg.batch_size; ++i)
            batch.emplace_back(ds.seq(
                false, static_cast<long long>(st.rng.below(static_cast<std::uint64_t>(ds.n_train())))));
        const auto m = plaid::train_step(st, std::move(batch));
        json rec;
        rec["step"] = m.step;
        rec["total"] = m.total;
        rec["prior_kl"] = m.prior_kl;
        rec["diffusion"] = m.diffusion;
        rec["recon"] = m.recon;
        rec["n_diff"] = m.n_diff;
        rec["n_recon"] = m.n_recon;
        rec["lr"] = m.lr;
        rec["wd"] = m.wd;
        rec["grad_norm"] = m.grad_norm;
        rec["wallclock"] = m.wallclock_s;
        log << rec.dump() << "\n";
        if (checkpoint_every > 0 && st.step % checkpoint_every == 0)
            plaid::write_file(out_dir + "/ckpt_step" + std::to_string(st.step) + ".pldk",
                              plaid::serialize_checkpoint(st, vocab));
    }
    plaid::write_file(out_dir + "/ckpt_final.pldk", plaid::serialize_checkpoint(st, vocab));
    std::cout << "trained to step " << st.step << ", checkpoints in " << out_dir << "\n";
    return 0;
}

template <class Real>
int run_eval(const plaid::RunConfig& cfg, const std::string& ckpt_path,
             const std::string& data_path, const std::string& out_path) {
    auto [st, vocab] = plaid::deserialize_checkpoint<Real>(plaid::read_file(ckpt_path));
    const auto ds = plaid::deserialize_dataset(plaid::read_file(data_path));
    const bool val = cfg.get_str("eval.split") == "val";
    const auto seqs = split_sequences(ds, val, cfg.get_int("eval.max_sequences"));
    long long chars = 0;
    for (const auto& s : seqs) chars += static_cast<long long>(vocab.decode(s.tokens).size());

    const auto rep = plaid::eval_nll(st.model, seqs, chars, cfg.get_int("eval.mc_draws"),
                                     cfg.get_u64("eval.seed"), data_path);
    json j;
    j["dataset"] = rep.dataset;
    j["sequences"] = rep.sequences;
    j["nats_per_token"] = rep.nats_per_token;
    j["nats_per_char"] = rep.nats_per_char;
    j["bpc"] = rep.bpc;
    j["ppl"] = rep.ppl;
    j["mc_draws"] = rep.mc_draws;
    j["seed"] = rep.seed;
    std::cout << j.dump() << "\n";
    if (!out_path.empty()) plaid::write_file(out_path, j.dump() + "\n");
    return 0;
}

template <class Real>
int run_sample(const plaid::RunConfig& cfg, const std::string& ckpt_path,
               const std::string& out_path, const std::optional<plaid::GuidanceSpec>& cli_spec,
               const std::string& spec_file) {
    auto [st, vocab] = plaid::deserialize_checkpoint<Real>(plaid::read_file(ckpt_path));
    plaid::SamplerConfig sc;
    sc.T = cfg.get_int("sample.T");
    sc.tau = cfg.get_real("sample.tau");
    sc.seq_len = cfg.get_int("sample.seq_len");
    sc.seed = cfg.get_u64("sample.seed");
    sc.guidance_weight = cfg.get_real("sample.guidance_weight");
    sc.validate();

    std::optional<plaid::GuidanceSpec> spec = cli_spec;
    if (!spec_file.empty())
        spec = spec_from_json(json::parse(plaid::read_file(spec_file)), vocab);
    if (spec) spec->validate(sc.seq_len, st.model.cfg.vocab);

    const int count = cfg.get_int("sample.count");
    std::ofstream out(out_path);
    plaid::require(static_cast<bool>(out), "cannot write " + out_path);
    std::ofstream meta(out_path + ".meta.jsonl");
    for (int i = 0; i < count; ++i) {
        plaid::SamplerConfig one = sc;
        one.seed = sc.seed + static_cast<std::uint64_t>(i);
        plaid::SampleStats stats;
        const auto tokens = plaid::sample(st.model, one, spec, &stats);
        out << escape_line(vocab.decode(tokens)) << "\n";
        json j;
        j["seed"] = one.seed;
        j["T"] = one.T;
        j["tau"] = one.tau;
        j["spec"] = spec ? spec_to_json(*spec) : json::array();
        j["guidance_weight"] = one.guidance_weight;
        j["wallclock"] = stats.wallclock_s;
        meta << j.dump() << "\n";
    }
    std::cout << "wrote " << count << " samples to " << out_path << "\n";
    return 0;
}

int run_scaling_fit(const std::string& records_path, const std::string& out_path) {
    std::vector<plaid::IsoFlopPoint> pts;
    std::istringstream in(plaid::read_file(records_path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        pts.push_back({j.at("budget").get<double>(), j.at("params").get<double>(),
                       j.at("loss").get<double>()});
    }
    const auto rep = plaid::analyze_isoflops(pts);
    json j;
    j["budgets"] = json::array();
    std::string tsv = "budget\tn_star\tl_star\n";
    for (const auto& b : rep.budgets) {
        j["budgets"].push_back({{"budget", b.budget}, {"n_star", b.n_star}, {"l_star", b.l_star}});
        std::ostringstream row;
        row << b.budget << "\t" << b.n_star << "\t" << b.l_star << "\n";
        tsv += row.str();
    }
    j["loss_law"] = {{"alpha", rep.loss_law.alpha},
                     {"beta", rep.loss_law.beta},
                     {"residual", rep.loss_law.residual}};
    j["param_law"] = {{"alpha", rep.param_law.alpha},
                      {"beta", rep.param_law.beta},
                      {"residual", rep.param_law.residual}};
    std::cout << j.dump(2) << "\n";
    if (!out_path.empty()) {
        plaid::write_file(out_path, j.dump(2) + "\n");
        plaid::write_file(out_path + ".tsv", tsv);
    }
    return 0;
}

int run_tokenize(const plaid::RunConfig& cfg, const std::vector<std::string>& inputs,
                 const std::string& out_prefix) {
    plaid::require(!inputs.empty(), "tokenize: at least one input file required");
    std::string corpus;
    std::vector<std::string> documents;
    for (const auto& path : inputs) {
        const auto text = plaid::read_file(path);
        corpus += text;
        for (auto& d : plaid::split_documents(text)) documents.push_back(std::move(d));
    }
    const auto vocab = plaid::build_vocab(corpus, cfg.get_int("data.vocab_size"));
    const auto ds = plaid::build_dataset(vocab, documents, cfg.get_int("train.seq_len"),
                                         cfg.get_real("data.val_frac"));
    plaid::write_file(out_prefix + ".vocab", plaid::serialize_vocab(vocab));
    plaid::write_file(out_prefix + ".plds", plaid::serialize_dataset(ds));
    std::cout << "vocab " << vocab.size() << " tokens, " << ds.n_train() << " train / "
              << ds.n_val() << " val sequences of length " << ds.seq_len << "\n";
    return 0;
}

template <class F>
int dispatch_dtype(const std::string& ckpt_path, F&& fn) {
    const auto dtype = plaid::checkpoint_dtype(plaid::read_file(ckpt_path));
    return dtype == 0 ? fn(float{}) : fn(double{});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Plaid diffusion language model toolkit"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string data_path, vocab_path, ckpt_path, out_path, resume_path, spec_file, records_path;
    std::vector<std::string> inputs, spans, lexicals;
    bool negate = false;
    auto push_override = [&flags](const std::string& key) {
        return [&flags, key](const std::string& v) { flags.overrides.push_back(key + "=" + v); };
    };

    auto* train = app.add_subcommand("train", "train a model");
    add_common(train, flags);
    train->add_option("--data", data_path, "packed dataset (.plds)")->required();
    train->add_option("--vocab", vocab_path, "vocabulary file (.vocab)");
    train->add_option("--checkpoint", resume_path, "resume from this checkpoint");
    train->add_option("--out", out_path, "output directory")->required();
    train->add_option_function<std::string>("--steps", push_override("train.total_steps"),
                                            "override train.total_steps");
    train->add_option_function<std::string>("--seed", push_override("train.seed"),
                                            "override train.seed");

    auto* eval = app.add_subcommand("eval", "evaluate the held-out bound");
    add_common(eval, flags);
    eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    eval->add_option("--data", data_path, "packed dataset (.plds)")->required();
    eval->add_option("--out", out_path, "write the report here too");
    eval->add_option_function<std::string>("--seed", push_override("eval.seed"),
                                           "override eval.seed");

    auto* sample = app.add_subcommand("sample", "generate unconditional samples");
    add_common(sample, flags);
    sample->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    sample->add_option("--out", out_path, "samples file")->required();
    sample->add_option_function<std::string>("--seed", push_override("sample.seed"),
                                             "override sample.seed");
    sample->add_option_function<std::string>("--steps", push_override("sample.T"),
                                             "override sample.T");
    sample->add_option_function<std::string>("--tau", push_override("sample.tau"),
                                             "override sample.tau");

    auto* guide = app.add_subcommand("guide", "generate with token guidance");
    add_common(guide, flags);
    guide->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    guide->add_option("--out", out_path, "samples file")->required();
    guide->add_option("--span", spans, "span term, start:end:text (repeatable)");
    guide->add_option("--lexical", lexicals, "lexical term, single-token text (repeatable)");
    guide->add_flag("--negate", negate, "negate the lexical terms");
    guide->add_option("--guidance-file", spec_file, "JSON guidance spec (overrides flags)");
    guide->add_option_function<std::string>(
        "--guidance-weight", push_override("sample.guidance_weight"),
        "override sample.guidance_weight");
    guide->add_option_function<std::string>("--seed", push_override("sample.seed"),
                                            "override sample.seed");
    guide->add_option_function<std::string>("--steps", push_override("sample.T"),
                                            "override sample.T");
    guide->add_option_function<std::string>("--tau", push_override("sample.tau"),
                                            "override sample.tau");

    auto* scaling = app.add_subcommand("scaling-fit", "IsoFLOP and power-law fits");
    scaling->add_option("--records", records_path, "JSONL of {budget, params, loss}")->required();
    scaling->add_option("--out", out_path, "write report (.tsv table alongside)");

    auto* tokenize = app.add_subcommand("tokenize", "build vocabulary and packed dataset");
    add_common(tokenize, flags);
    tokenize->add_option("--input", inputs, "UTF-8 text files (repeatable)")->required();
    tokenize->add_option("--out-prefix", out_path, "output prefix")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*scaling) return run_scaling_fit(records_path, out_path);
        const auto cfg = flags.load();
        if (*tokenize) return run_tokenize(cfg, inputs, out_path);
        if (*train) {
            const auto dtype = cfg.get_str("dtype");
            plaid::require(dtype == "f32" || dtype == "f64", "dtype must be f32 or f64");
            if (!resume_path.empty())
                return dispatch_dtype(resume_path, [&](auto tag) {
                    return run_train<decltype(tag)>(cfg, data_path, vocab_path, resume_path,
                                                    out_path);
                });
            return dtype == "f32" ? run_train<float>(cfg, data_path, vocab_path, "", out_path)
                                  : run_train<double>(cfg, data_path, vocab_path, "", out_path);
        }
        if (*eval)
            return dispatch_dtype(ckpt_path, [&](auto tag) {
                return run_eval<decltype(tag)>(cfg, ckpt_path, data_path, out_path);
            });
        if (*sample)
            return dispatch_dtype(ckpt_path, [&](auto tag) {
                return run_sample<decltype(tag)>(cfg, ckpt_path, out_path, std::nullopt, "");
            });
        if (*guide)
            return dispatch_dtype(ckpt_path, [&](auto tag) {
                std::optional<plaid::GuidanceSpec> spec;
                if (spec_file.empty()) {
                    auto [st, vocab] =
                        plaid::deserialize_checkpoint<decltype(tag)>(plaid::read_file(ckpt_path));
                    (void)st;
                    spec = spec_from_flags(spans, lexicals, negate, vocab);
                }
                return run_sample<decltype(tag)>(cfg, ckpt_path, out_path, spec, spec_file);
            });
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
