#pragma once

// Single-file checkpoint container: magic "PLDK", version, dtype tag, configs,
// step, rng state, moment tracker, vocabulary, then every parameter tensor and
// its optimizer moments as name/shape/data blocks in canonical order.
// save -> load -> save is byte-identical.

#include <cstring>
#include <string>
#include <vector>

#include "plaid/corpus.hpp"
#include "plaid/trainer.hpp"

namespace plaid {

namespace detail {

template <class Real>
constexpr std::uint8_t dtype_tag();
template <>
constexpr std::uint8_t dtype_tag<float>() {
    return 0;
}
template <>
constexpr std::uint8_t dtype_tag<double>() {
    return 1;
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

template <class Real>
void put_tensor(std::string& out, const std::string& name, const Mat<Real>& m) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(m.rows));
    put_u32(out, static_cast<std::uint32_t>(m.cols));
    const size_t bytes = m.size() * sizeof(Real);
    const size_t base = out.size();
    out.resize(base + bytes);
    std::memcpy(out.data() + base, m.data(), bytes);
}

inline double get_f64(ByteReader& rd) {
    const std::uint64_t bits = rd.u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

template <class Real>
Mat<Real> get_tensor(ByteReader& rd, const std::string& expect_name) {
    const std::string name = rd.bytes(rd.u32());
    if (name != expect_name)
        throw std::runtime_error("checkpoint: expected tensor '" + expect_name + "', found '" +
                                 name + "'");
    const int rows = static_cast<int>(rd.u32());
    const int cols = static_cast<int>(rd.u32());
    Mat<Real> m(rows, cols);
    const size_t bytes = m.size() * sizeof(Real);
    const std::string data = rd.bytes(bytes);
    std::memcpy(m.data(), data.data(), bytes);
    return m;
}

}  // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;

template <class Real>
std::string serialize_checkpoint(const TrainState<Real>& st, const Vocabulary& vocab) {
    require(const_cast<TrainState<Real>&>(st).model.emb.rows_distinct(),
            "checkpoint: embedding table rows are not distinct");
    std::string out = "PLDK";
    detail::put_u32(out, kCheckpointVersion);
    out += static_cast<char>(detail::dtype_tag<Real>());

    const DenoiserConfig& dc = st.model.cfg;
    for (int v : {dc.depth, dc.width, dc.vocab, dc.embed_dim, dc.heads, dc.max_seq_len,
                  dc.time_enc_dim})
        detail::put_u32(out, static_cast<std::uint32_t>(v));
    detail::put_u32(out, static_cast<std::uint32_t>(st.model.sched.units()));

    const TrainConfig& tc = st.cfg;
    detail::put_f64(out, tc.base_lr);
    detail::put_u32(out, static_cast<std::uint32_t>(tc.warmup_steps));
    detail::put_u32(out, static_cast<std::uint32_t>(tc.total_steps));
    detail::put_u32(out, static_cast<std::uint32_t>(tc.batch_size));
    detail::put_u32(out, static_cast<std::uint32_t>(tc.seq_len));
    detail::put_f64(out, tc.truncate_frac);
    detail::put_u64(out, tc.seed);
    detail::put_f64(out, tc.wd_coeff);
    detail::put_f64(out, tc.beta1);
    detail::put_f64(out, tc.beta2);
    detail::put_f64(out, tc.adam_eps);
    detail::put_f64(out, tc.grad_clip);
    out += static_cast<char>(tc.disable_output_prior ? 1 : 0);

    detail::put_u64(out, static_cast<std::uint64_t>(st.step));
    for (std::uint64_t w : st.rng.state()) detail::put_u64(out, w);
    detail::put_f64(out, st.tracker.decay);
    detail::put_f64(out, st.tracker.m1_diff);
    detail::put_f64(out, st.tracker.m2_diff);
    detail::put_f64(out, st.tracker.m1_recon);
    detail::put_f64(out, st.tracker.m2_recon);

    out += serialize_vocab(vocab);

    std::uint32_t n_tensors = 0;
    const_cast<TrainState<Real>&>(st).model.for_each_param(
        [&](const std::string&, Mat<Real>&, bool) { ++n_tensors; });
    detail::put_u32(out, n_tensors);
    size_t idx = 0;
    const_cast<TrainState<Real>&>(st).model.for_each_param(
        [&](const std::string& name, Mat<Real>& p, bool) {
            detail::put_tensor(out, name, p);
            detail::put_tensor(out, "adam_m." + name, st.adam_m[idx]);
            detail::put_tensor(out, "adam_v." + name, st.adam_v[idx]);
            ++idx;
        });
    return out;
}

inline std::uint8_t checkpoint_dtype(const std::string& buf) {
    detail::ByteReader rd(buf);
    if (rd.bytes(4) != "PLDK") throw std::runtime_error("checkpoint: bad magic");
    const std::uint32_t version = rd.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                                 " (expected " + std::to_string(kCheckpointVersion) + ")");
    return static_cast<std::uint8_t>(rd.bytes(1)[0]);
}

template <class Real>
std::pair<TrainState<Real>, Vocabulary> deserialize_checkpoint(const std::string& buf) {
    detail::ByteReader rd(buf);
    if (rd.bytes(4) != "PLDK") throw std::runtime_error("checkpoint: bad magic");
    const std::uint32_t version = rd.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                                 " (expected " + std::to_string(kCheckpointVersion) + ")");
    const std::uint8_t dtype = static_cast<std::uint8_t>(rd.bytes(1)[0]);
    if (dtype != detail::dtype_tag<Real>())
        throw std::runtime_error("checkpoint: dtype tag " + std::to_string(dtype) +
                                 " does not match the requested scalar type");

    DenoiserConfig dc;
    dc.depth = static_cast<int>(rd.u32());
    dc.width = static_cast<int>(rd.u32());
    dc.vocab = static_cast<int>(rd.u32());
    dc.embed_dim = static_cast<int>(rd.u32());
    dc.heads = static_cast<int>(rd.u32());
    dc.max_seq_len = static_cast<int>(rd.u32());
    dc.time_enc_dim = static_cast<int>(rd.u32());
    const int sched_units = static_cast<int>(rd.u32());

    TrainConfig tc;
    tc.base_lr = detail::get_f64(rd);
    tc.warmup_steps = static_cast<int>(rd.u32());
    tc.total_steps = static_cast<int>(rd.u32());
    tc.batch_size = static_cast<int>(rd.u32());
    tc.seq_len = static_cast<int>(rd.u32());
    tc.truncate_frac = detail::get_f64(rd);
    tc.seed = rd.u64();
    tc.wd_coeff = detail::get_f64(rd);
    tc.beta1 = detail::get_f64(rd);
    tc.beta2 = detail::get_f64(rd);
    tc.adam_eps = detail::get_f64(rd);
    tc.grad_clip = detail::get_f64(rd);
    tc.disable_output_prior = rd.bytes(1)[0] != 0;

    const long long step = static_cast<long long>(rd.u64());
    std::array<std::uint64_t, 4> rng_state{};
    for (auto& w : rng_state) w = rd.u64();
    MomentTracker tracker;
    tracker.decay = detail::get_f64(rd);
    tracker.m1_diff = detail::get_f64(rd);
    tracker.m2_diff = detail::get_f64(rd);
    tracker.m1_recon = detail::get_f64(rd);
    tracker.m2_recon = detail::get_f64(rd);

    Vocabulary vocab = deserialize_vocab(rd);

    // structural init, then overwrite every tensor from the container
    TrainState<Real> st = TrainState<Real>::init(tc, dc, sched_units);
    st.step = step;
    st.model.anneal_step = tc.disable_output_prior ? 0 : step;
    st.rng.set_state(rng_state);
    st.tracker = tracker;

    const std::uint32_t n_tensors = rd.u32();
    std::uint32_t expect = 0;
    st.model.for_each_param([&](const std::string&, Mat<Real>&, bool) { ++expect; });
    if (n_tensors != expect) throw std::runtime_error("checkpoint: tensor count mismatch");
    size_t idx = 0;
    st.model.for_each_param([&](const std::string& name, Mat<Real>& p, bool) {
        Mat<Real> t = detail::get_tensor<Real>(rd, name);
        require(t.rows == p.rows && t.cols == p.cols, "checkpoint: tensor shape mismatch");
        p = std::move(t);
        st.adam_m[idx] = detail::get_tensor<Real>(rd, "adam_m." + name);
        st.adam_v[idx] = detail::get_tensor<Real>(rd, "adam_v." + name);
        ++idx;
    });
    return {std::move(st), std::move(vocab)};
}

}  // namespace plaid
