#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "motioncache/error.hpp"
#include "motioncache/flops.hpp"
#include "motioncache/policy.hpp"

namespace mc {

enum class Verbosity { Decisions = 0, Latents = 1, Residuals = 2 };

inline std::string verbosity_name(Verbosity v) {
    switch (v) {
        case Verbosity::Decisions: return "decisions";
        case Verbosity::Latents: return "latents";
        case Verbosity::Residuals: return "residuals";
    }
    return "?";
}

inline Verbosity verbosity_from_name(const std::string& s) {
    if (s == "decisions" || s == "decisions-only") return Verbosity::Decisions;
    if (s == "latents" || s == "+latents") return Verbosity::Latents;
    if (s == "residuals" || s == "+residuals") return Verbosity::Residuals;
    throw InvalidArgument("unknown verbosity: " + s);
}

enum class TensorTag : std::uint8_t {
    LatentIn = 0,      // X_t, the step input
    LatentFinal = 1,   // X_0 of a chunk
    Residual = 2,      // R_t of computed tokens (full tensor at full steps)
    WeightMap = 3,     // W (F x H x W)
    ImportanceMap = 4, // M (F x H x W)
    TrueNext = 5,      // full-compute output at this step (dual emit)
    ApproxNext = 6,    // cache-approximated output at this step (dual emit)
    Velocity = 7,
};

struct TraceStep {
    std::int64_t chunk = 0;
    std::int64_t t = 0;               // noise-clock time of the step input
    std::int64_t step_in_window = 0;
    std::int64_t phase = 1;
    StepMode mode = StepMode::FullChunkCompute;
    bool warmup = false;
    bool delta_valid = false;
    bool delta_infinite = false;
    std::int64_t active_count = 0;
    std::int64_t n_tokens = 0;
    double delta_chunk = 0.0;
    StepFlops flops;
    std::vector<std::uint8_t> mask;  // one byte per token; empty when implicit

    bool operator==(const TraceStep& o) const {
        return chunk == o.chunk && t == o.t && step_in_window == o.step_in_window &&
               phase == o.phase && mode == o.mode && warmup == o.warmup &&
               delta_valid == o.delta_valid && delta_infinite == o.delta_infinite &&
               active_count == o.active_count && n_tokens == o.n_tokens &&
               delta_chunk == o.delta_chunk && flops.attention == o.flops.attention &&
               flops.attn_gemm == o.flops.attn_gemm && flops.ffn_gemm == o.flops.ffn_gemm &&
               flops.reuse == o.flops.reuse && mask == o.mask;
    }
};

struct TraceTensor {
    TensorTag tag = TensorTag::LatentIn;
    std::int64_t chunk = 0;
    std::int64_t t = 0;
    std::vector<std::int64_t> dims;
    std::vector<double> data;

    bool operator==(const TraceTensor& o) const = default;
};

struct RunTrace {
    nlohmann::json header;  // persisted as the JSON sidecar
    std::vector<TraceStep> steps;
    std::vector<TraceTensor> tensors;

    const TraceTensor* find_tensor(TensorTag tag, std::int64_t chunk, std::int64_t t) const {
        for (const auto& tt : tensors) {
            if (tt.tag == tag && tt.chunk == chunk && tt.t == t) return &tt;
        }
        return nullptr;
    }

    std::vector<const TraceStep*> chunk_steps(std::int64_t chunk) const {
        std::vector<const TraceStep*> out;
        for (const auto& s : steps) {
            if (s.chunk == chunk) out.push_back(&s);
        }
        return out;
    }
};

namespace detail {

constexpr std::uint32_t kTraceVersion = 1;
constexpr std::uint32_t kRecStep = 1;
constexpr std::uint32_t kRecTensor = 2;
constexpr std::uint32_t kRecEnd = 0;

class ByteWriter {
public:
    void u8(std::uint8_t x) { buf_.push_back(static_cast<char>(x)); }
    void u32(std::uint32_t x) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t x) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
    }
    void i64(std::int64_t x) { u64(static_cast<std::uint64_t>(x)); }
    void f64(double x) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        u64(bits);
    }
    void bytes(const std::uint8_t* p, std::size_t n) {
        buf_.append(reinterpret_cast<const char*>(p), n);
    }
    const std::string& str() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(const char* p, std::size_t n) : p_(p), n_(n) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(p_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(p_[pos_++])) << (8 * i);
        return x;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(p_[pos_++])) << (8 * i);
        return x;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() {
        const std::uint64_t bits = u64();
        double x;
        std::memcpy(&x, &bits, sizeof x);
        return x;
    }
    void bytes(std::uint8_t* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, p_ + pos_, n);
        pos_ += n;
    }
    std::size_t remaining() const { return n_ - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > n_) throw IoError("trace: truncated record");
    }
    const char* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

inline std::string encode_step(const TraceStep& s) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(s.chunk));
    w.u32(static_cast<std::uint32_t>(s.t));
    w.u32(static_cast<std::uint32_t>(s.step_in_window));
    w.u8(static_cast<std::uint8_t>(s.phase));
    w.u8(static_cast<std::uint8_t>(s.mode));
    std::uint8_t flags = 0;
    if (s.warmup) flags |= 1;
    if (s.delta_valid) flags |= 2;
    if (s.delta_infinite) flags |= 4;
    if (!s.mask.empty()) flags |= 8;
    w.u8(flags);
    w.u8(0);
    w.u64(static_cast<std::uint64_t>(s.active_count));
    w.u64(static_cast<std::uint64_t>(s.n_tokens));
    w.f64(s.delta_chunk);
    w.f64(s.flops.attention);
    w.f64(s.flops.attn_gemm);
    w.f64(s.flops.ffn_gemm);
    w.f64(s.flops.reuse);
    if (!s.mask.empty()) {
        w.u64(s.mask.size());
        std::vector<std::uint8_t> packed((s.mask.size() + 7) / 8, 0);
        for (std::size_t i = 0; i < s.mask.size(); ++i) {
            if (s.mask[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
        }
        w.bytes(packed.data(), packed.size());
    }
    return w.str();
}

inline TraceStep decode_step(ByteReader& r) {
    TraceStep s;
    s.chunk = r.u32();
    s.t = r.u32();
    s.step_in_window = r.u32();
    s.phase = r.u8();
    s.mode = static_cast<StepMode>(r.u8());
    const std::uint8_t flags = r.u8();
    r.u8();
    s.warmup = flags & 1;
    s.delta_valid = flags & 2;
    s.delta_infinite = flags & 4;
    const bool has_mask = flags & 8;
    s.active_count = static_cast<std::int64_t>(r.u64());
    s.n_tokens = static_cast<std::int64_t>(r.u64());
    s.delta_chunk = r.f64();
    s.flops.attention = r.f64();
    s.flops.attn_gemm = r.f64();
    s.flops.ffn_gemm = r.f64();
    s.flops.reuse = r.f64();
    if (has_mask) {
        const std::uint64_t nbits = r.u64();
        std::vector<std::uint8_t> packed((nbits + 7) / 8);
        r.bytes(packed.data(), packed.size());
        s.mask.resize(nbits);
        for (std::uint64_t i = 0; i < nbits; ++i) {
            s.mask[i] = (packed[i / 8] >> (i % 8)) & 1;
        }
    }
    return s;
}

inline std::string encode_tensor(const TraceTensor& t) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(t.tag));
    w.u32(static_cast<std::uint32_t>(t.chunk));
    w.u32(static_cast<std::uint32_t>(t.t));
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    std::size_t n = 1;
    for (auto d : t.dims) {
        w.u32(static_cast<std::uint32_t>(d));
        n *= static_cast<std::size_t>(d);
    }
    if (n != t.data.size()) throw IoError("trace: tensor dims do not match payload");
    for (double x : t.data) w.f64(x);
    return w.str();
}

inline TraceTensor decode_tensor(ByteReader& r) {
    TraceTensor t;
    t.tag = static_cast<TensorTag>(r.u8());
    t.chunk = r.u32();
    t.t = r.u32();
    const std::uint8_t ndim = r.u8();
    std::size_t n = 1;
    for (std::uint8_t i = 0; i < ndim; ++i) {
        const std::uint32_t d = r.u32();
        t.dims.push_back(d);
        n *= d;
    }
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.data[i] = r.f64();
    return t;
}

}  // namespace detail

inline std::string trace_sidecar_path(const std::string& mctr_path) {
    return mctr_path + ".json";
}

inline void write_trace(const RunTrace& trace, const std::string& mctr_path) {
    std::ofstream f(mctr_path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open trace file for writing: " + mctr_path);
    f.write("MCTR", 4);
    detail::ByteWriter vw;
    vw.u32(detail::kTraceVersion);
    f.write(vw.str().data(), static_cast<std::streamsize>(vw.str().size()));

    auto put_record = [&](std::uint32_t type, const std::string& payload) {
        detail::ByteWriter hw;
        hw.u32(type);
        hw.u64(payload.size());
        f.write(hw.str().data(), static_cast<std::streamsize>(hw.str().size()));
        f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    };
    for (const auto& s : trace.steps) put_record(detail::kRecStep, detail::encode_step(s));
    for (const auto& t : trace.tensors) put_record(detail::kRecTensor, detail::encode_tensor(t));
    put_record(detail::kRecEnd, "");
    if (!f) throw IoError("failed writing trace: " + mctr_path);

    std::ofstream side(trace_sidecar_path(mctr_path), std::ios::trunc);
    if (!side) throw IoError("cannot open trace sidecar for writing");
    side << trace.header.dump(2) << "\n";
    if (!side) throw IoError("failed writing trace sidecar");
}

inline RunTrace read_trace(const std::string& mctr_path) {
    std::ifstream f(mctr_path, std::ios::binary);
    if (!f) throw IoError("cannot open trace file: " + mctr_path);
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (all.size() < 8 || all.compare(0, 4, "MCTR") != 0) {
        throw IoError("not an MCTR trace: " + mctr_path);
    }
    detail::ByteReader head(all.data() + 4, all.size() - 4);
    const std::uint32_t version = head.u32();
    if (version != detail::kTraceVersion) {
        throw IoError("unsupported trace version " + std::to_string(version));
    }

    RunTrace trace;
    std::size_t pos = 8;
    bool saw_end = false;
    while (pos < all.size()) {
        detail::ByteReader rh(all.data() + pos, all.size() - pos);
        const std::uint32_t type = rh.u32();
        const std::uint64_t len = rh.u64();
        pos += 12;
        if (pos + len > all.size()) throw IoError("trace: truncated record payload");
        detail::ByteReader rp(all.data() + pos, static_cast<std::size_t>(len));
        pos += len;
        if (type == detail::kRecStep) {
            trace.steps.push_back(detail::decode_step(rp));
        } else if (type == detail::kRecTensor) {
            trace.tensors.push_back(detail::decode_tensor(rp));
        } else if (type == detail::kRecEnd) {
            saw_end = true;
            break;
        } else {
            throw IoError("trace: unknown record type " + std::to_string(type));
        }
    }
    if (!saw_end) throw IoError("trace: missing end record");

    std::ifstream side(trace_sidecar_path(mctr_path));
    if (!side) throw IoError("cannot open trace sidecar: " + trace_sidecar_path(mctr_path));
    side >> trace.header;
    return trace;
}

}  // namespace mc
