#pragma once

// Tokenization and packing. Byte-level base vocabulary (256 bytes + <eod>,
// <pad>, <unk> = 259) with optional greedy pair merges on top. Documents are
// joined into one stream with <eod> markers, the final 5% of documents form
// the validation split, and each split packs into fixed-length sequences
// (trailing partial sequence dropped).

#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "plaid/core.hpp"

namespace plaid {

struct Vocabulary {
    static constexpr int kByteBase = 256;
    static constexpr int kEodId = 256;
    static constexpr int kPadId = 257;
    static constexpr int kUnkId = 258;
    static constexpr int kBaseSize = 259;

    std::vector<std::string> tokens;           // id -> byte string
    std::vector<std::pair<int, int>> merges;   // applied in order during encode

    int size() const { return static_cast<int>(tokens.size()); }

    static Vocabulary byte_level() {
        Vocabulary v;
        v.tokens.reserve(kBaseSize);
        for (int b = 0; b < kByteBase; ++b) v.tokens.push_back(std::string(1, static_cast<char>(b)));
        v.tokens.push_back("<eod>");
        v.tokens.push_back("<pad>");
        v.tokens.push_back("<unk>");
        return v;
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        ids.reserve(text.size());
        for (unsigned char b : text) ids.push_back(static_cast<int>(b));
        for (size_t mi = 0; mi < merges.size(); ++mi) {
            const auto [l, r] = merges[mi];
            const int merged = kBaseSize + static_cast<int>(mi);
            std::vector<int> next;
            next.reserve(ids.size());
            for (size_t i = 0; i < ids.size();) {
                if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
                    next.push_back(merged);
                    i += 2;
                } else {
                    next.push_back(ids[i]);
                    i += 1;
                }
            }
            ids.swap(next);
        }
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            require(id >= 0 && id < size(), "decode: token id out of range");
            if (id == kEodId || id == kPadId || id == kUnkId) continue;
            out += tokens[id];
        }
        return out;
    }
};

// Deterministic vocabulary: byte level at target 259, greedy highest-count
// pair merges above that (ties broken by lowest pair ids). Stops early if no
// pair repeats.
inline Vocabulary build_vocab(const std::string& corpus, int target_size) {
    require(!corpus.empty(), "build_vocab: empty corpus");
    require(target_size >= Vocabulary::kBaseSize,
            "build_vocab: target_size below base alphabet size (259)");
    Vocabulary v = Vocabulary::byte_level();
    std::vector<int> ids;
    ids.reserve(corpus.size());
    for (unsigned char b : corpus) ids.push_back(static_cast<int>(b));

    while (v.size() < target_size) {
        std::unordered_map<std::uint64_t, long long> counts;
        for (size_t i = 0; i + 1 < ids.size(); ++i) {
            const std::uint64_t key =
                (static_cast<std::uint64_t>(ids[i]) << 32) | static_cast<std::uint32_t>(ids[i + 1]);
            ++counts[key];
        }
        std::uint64_t best_key = 0;
        long long best_count = 1;  // a merge must occur at least twice
        for (const auto& [key, count] : counts)
            if (count > best_count || (count == best_count && best_count > 1 && key < best_key)) {
                best_key = key;
                best_count = count;
            }
        if (best_count < 2) break;
        const int l = static_cast<int>(best_key >> 32);
        const int r = static_cast<int>(best_key & 0xffffffffu);
        const int merged = v.size();
        v.merges.emplace_back(l, r);
        v.tokens.push_back(v.tokens[l] + v.tokens[r]);
        std::vector<int> next;
        next.reserve(ids.size());
        for (size_t i = 0; i < ids.size();) {
            if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
                next.push_back(merged);
                i += 2;
            } else {
                next.push_back(ids[i]);
                i += 1;
            }
        }
        ids.swap(next);
    }
    return v;
}

// floor(len/seq_len) non-overlapping sequences; the tail is dropped.
inline std::vector<std::int32_t> pack_sequences(const std::vector<std::int32_t>& stream,
                                                int seq_len) {
    require(seq_len >= 1, "pack_sequences: seq_len must be >= 1");
    require(static_cast<int>(stream.size()) >= seq_len,
            "pack_sequences: stream shorter than seq_len");
    const size_t n = (stream.size() / seq_len) * seq_len;
    return std::vector<std::int32_t>(stream.begin(), stream.begin() + n);
}

struct PackedDataset {
    int vocab_size{0};
    int seq_len{0};
    std::vector<std::int32_t> train_tokens;
    std::vector<std::int32_t> val_tokens;

    long long n_train() const { return seq_len ? train_tokens.size() / seq_len : 0; }
    long long n_val() const { return seq_len ? val_tokens.size() / seq_len : 0; }

    std::vector<int> seq(bool val, long long i) const {
        const auto& src = val ? val_tokens : train_tokens;
        std::vector<int> out(seq_len);
        for (int j = 0; j < seq_len; ++j) out[j] = src[i * seq_len + j];
        return out;
    }
};

// Documents are tokenized, each followed by <eod>; the final val_frac of
// documents (by position) form the validation split.
inline PackedDataset build_dataset(const Vocabulary& vocab,
                                   const std::vector<std::string>& documents, int seq_len,
                                   double val_frac = 0.05) {
    require(!documents.empty(), "build_dataset: no documents");
    const size_t n_val_docs = static_cast<size_t>(documents.size() * val_frac);
    const size_t n_train_docs = documents.size() - n_val_docs;
    std::vector<std::int32_t> train_stream, val_stream;
    for (size_t i = 0; i < documents.size(); ++i) {
        auto& dst = i < n_train_docs ? train_stream : val_stream;
        for (int id : vocab.encode(documents[i])) dst.push_back(id);
        dst.push_back(Vocabulary::kEodId);
    }
    PackedDataset ds;
    ds.vocab_size = vocab.size();
    ds.seq_len = seq_len;
    ds.train_tokens = pack_sequences(train_stream, seq_len);
    if (static_cast<int>(val_stream.size()) >= seq_len)
        ds.val_tokens = pack_sequences(val_stream, seq_len);
    return ds;
}

// Splits file contents into documents on blank lines.
inline std::vector<std::string> split_documents(const std::string& text) {
    std::vector<std::string> docs;
    std::string cur;
    size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '\n' && i + 1 < text.size() && text[i + 1] == '\n') {
            if (!cur.empty()) docs.push_back(cur);
            cur.clear();
            while (i < text.size() && text[i] == '\n') ++i;
        } else {
            cur += text[i];
            ++i;
        }
    }
    if (!cur.empty()) docs.push_back(cur);
    return docs;
}

// ---- binary io ----

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}
struct ByteReader {
    const std::string& buf;
    size_t pos{0};
    explicit ByteReader(const std::string& b) : buf(b) {}
    void need(size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("corrupt file: truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};
}  // namespace detail

inline std::string serialize_vocab(const Vocabulary& v) {
    std::string out = "PLVC";
    detail::put_u32(out, 1);  // version
    detail::put_u32(out, static_cast<std::uint32_t>(v.size()));
    for (const auto& t : v.tokens) {
        detail::put_u32(out, static_cast<std::uint32_t>(t.size()));
        out += t;
    }
    detail::put_u32(out, static_cast<std::uint32_t>(v.merges.size()));
    for (const auto& [l, r] : v.merges) {
        detail::put_u32(out, static_cast<std::uint32_t>(l));
        detail::put_u32(out, static_cast<std::uint32_t>(r));
    }
    return out;
}

inline Vocabulary deserialize_vocab(detail::ByteReader& rd) {
    if (rd.bytes(4) != "PLVC") throw std::runtime_error("vocabulary: bad magic");
    const std::uint32_t version = rd.u32();
    if (version != 1) throw std::runtime_error("vocabulary: unsupported version");
    Vocabulary v;
    const std::uint32_t n = rd.u32();
    for (std::uint32_t i = 0; i < n; ++i) v.tokens.push_back(rd.bytes(rd.u32()));
    const std::uint32_t nm = rd.u32();
    for (std::uint32_t i = 0; i < nm; ++i) {
        const int l = static_cast<int>(rd.u32());
        const int r = static_cast<int>(rd.u32());
        v.merges.emplace_back(l, r);
    }
    return v;
}

inline std::string serialize_dataset(const PackedDataset& ds) {
    std::string out = "PLDS";
    detail::put_u32(out, 1);  // version
    detail::put_u32(out, static_cast<std::uint32_t>(ds.vocab_size));
    detail::put_u32(out, static_cast<std::uint32_t>(ds.seq_len));
    detail::put_u64(out, static_cast<std::uint64_t>(ds.n_train()));
    detail::put_u64(out, static_cast<std::uint64_t>(ds.n_val()));
    for (std::int32_t t : ds.train_tokens) detail::put_u32(out, static_cast<std::uint32_t>(t));
    for (std::int32_t t : ds.val_tokens) detail::put_u32(out, static_cast<std::uint32_t>(t));
    return out;
}

inline PackedDataset deserialize_dataset(const std::string& buf) {
    detail::ByteReader rd(buf);
    if (rd.bytes(4) != "PLDS") throw std::runtime_error("dataset: bad magic");
    if (rd.u32() != 1) throw std::runtime_error("dataset: unsupported version");
    PackedDataset ds;
    ds.vocab_size = static_cast<int>(rd.u32());
    ds.seq_len = static_cast<int>(rd.u32());
    const std::uint64_t n_train = rd.u64();
    const std::uint64_t n_val = rd.u64();
    ds.train_tokens.resize(n_train * ds.seq_len);
    ds.val_tokens.resize(n_val * ds.seq_len);
    for (auto& t : ds.train_tokens) t = static_cast<std::int32_t>(rd.u32());
    for (auto& t : ds.val_tokens) t = static_cast<std::int32_t>(rd.u32());
    return ds;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace plaid
