#pragma once

// Flat key=value run configuration with a typed schema. Unknown keys are
// rejected; flag overrides (--set k=v) beat file values.

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "plaid/core.hpp"

namespace plaid {

class RunConfig {
public:
    enum class Type { Int, Real, Str, U64 };

    RunConfig() {
        // model
        add("dtype", Type::Str, "f32");
        add("model.depth", Type::Int, "16");
        add("model.width", Type::Int, "256");
        add("model.heads", Type::Int, "4");
        add("model.embed_dim", Type::Int, "16");
        add("model.max_seq_len", Type::Int, "256");
        add("model.time_enc_dim", Type::Int, "64");
        add("model.sched_units", Type::Int, "8");
        // training
        add("train.base_lr", Type::Real, "0.0014");
        add("train.warmup_steps", Type::Int, "2500");
        add("train.total_steps", Type::Int, "10000");
        add("train.batch_size", Type::Int, "256");
        add("train.seq_len", Type::Int, "256");
        add("train.truncate_frac", Type::Real, "0.03");
        add("train.seed", Type::U64, "0");
        add("train.wd_coeff", Type::Real, "4e-05");
        add("train.grad_clip", Type::Real, "1");
        add("train.checkpoint_every", Type::Int, "1000");
        add("train.disable_output_prior", Type::Int, "0");
        // sampling
        add("sample.T", Type::Int, "4096");
        add("sample.tau", Type::Real, "0.9");
        add("sample.seq_len", Type::Int, "256");
        add("sample.seed", Type::U64, "0");
        add("sample.guidance_weight", Type::Real, "0");
        add("sample.count", Type::Int, "1");
        // evaluation
        add("eval.mc_draws", Type::Int, "16");
        add("eval.seed", Type::U64, "0");
        add("eval.split", Type::Str, "val");
        add("eval.max_sequences", Type::Int, "0");
        // tokenization
        add("data.vocab_size", Type::Int, "259");
        add("data.val_frac", Type::Real, "0.05");
    }

    void set(const std::string& key, const std::string& value) {
        const auto it = schema_.find(key);
        if (it == schema_.end())
            throw std::invalid_argument("config: unknown key '" + key + "'");
        check_type(key, it->second, value);
        values_[key] = value;
    }

    // "key=value" lines; '#' starts a comment, blank lines are skipped
    void load_text(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const size_t b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            const size_t e = line.find_last_not_of(" \t\r");
            line = line.substr(b, e - b + 1);
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": expected key=value");
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void apply_override(const std::string& kv) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config override must be key=value: '" + kv + "'");
        set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }

    int get_int(const std::string& key) const { return static_cast<int>(std::stoll(raw(key))); }
    double get_real(const std::string& key) const { return std::stod(raw(key)); }
    std::uint64_t get_u64(const std::string& key) const { return std::stoull(raw(key)); }
    std::string get_str(const std::string& key) const { return raw(key); }

    // effective configuration, sorted, for run-log headers
    std::string dump() const {
        std::string out;
        for (const auto& [key, type] : schema_) {
            (void)type;
            out += key + "=" + raw(key) + "\n";
        }
        return out;
    }

private:
    std::map<std::string, Type> schema_;
    std::map<std::string, std::string> values_;
    std::map<std::string, std::string> defaults_;

    void add(const std::string& key, Type t, const std::string& def) {
        schema_[key] = t;
        defaults_[key] = def;
    }

    const std::string& raw(const std::string& key) const {
        const auto it = schema_.find(key);
        if (it == schema_.end())
            throw std::invalid_argument("config: unknown key '" + key + "'");
        const auto v = values_.find(key);
        return v != values_.end() ? v->second : defaults_.at(key);
    }

    static std::string trim(const std::string& s) {
        const size_t b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const size_t e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    static void check_type(const std::string& key, Type t, const std::string& v) {
        try {
            size_t used = 0;
            switch (t) {
                case Type::Int:
                    (void)std::stoll(v, &used);
                    break;
                case Type::Real:
                    (void)std::stod(v, &used);
                    break;
                case Type::U64:
                    (void)std::stoull(v, &used);
                    break;
                case Type::Str:
                    used = v.size();
                    break;
            }
            if (used != v.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw std::invalid_argument("config: value '" + v + "' has the wrong type for key '" +
                                        key + "'");
        }
    }
};

}  // namespace plaid
