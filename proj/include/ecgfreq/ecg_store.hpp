#pragma once

// On-disk formats: ECGB record files (fixed 16-byte header + float32 LE
// payload, lead-major) and the manifest CSV that carries all metadata.
// Metadata lives only in the manifest so relabeling never rewrites payloads.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ecgfreq/csv.hpp"
#include "ecgfreq/errors.hpp"

namespace ecgfreq {

enum class Label : int { NORM = 0, AFIB = 1 };

inline const char* label_name(Label l) { return l == Label::AFIB ? "AFIB" : "NORM"; }

struct EcgRecord {
    std::string record_id;
    std::string patient_id;
    Label label = Label::NORM;
    std::uint32_t fs_hz = 0;
    std::uint32_t n_leads = 0;
    std::uint32_t n_samples = 0;
    std::vector<float> samples; // lead-major: samples[l * n_samples + t]

    float* lead(std::uint32_t l) { return samples.data() + static_cast<std::size_t>(l) * n_samples; }
    const float* lead(std::uint32_t l) const {
        return samples.data() + static_cast<std::size_t>(l) * n_samples;
    }
    float& at(std::uint32_t l, std::uint32_t t) {
        return samples[static_cast<std::size_t>(l) * n_samples + t];
    }
    float at(std::uint32_t l, std::uint32_t t) const {
        return samples[static_cast<std::size_t>(l) * n_samples + t];
    }
};

struct ManifestEntry {
    std::string record_id;
    std::string patient_id;
    std::string label; // free-form at read time; cohort::filter_labels narrows it
    std::uint32_t fs_hz = 0;
    std::string path;

    bool is_binary_label() const { return label == "AFIB" || label == "NORM"; }
    bool is_afib() const { return label == "AFIB"; }
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string source_path; // where the CSV was read from; relative record paths resolve against its directory
};

namespace detail {

constexpr std::uint32_t kEcgbHeaderSize = 16;

inline void put_u32_le(unsigned char* p, std::uint32_t v) {
    p[0] = static_cast<unsigned char>(v & 0xFF);
    p[1] = static_cast<unsigned char>((v >> 8) & 0xFF);
    p[2] = static_cast<unsigned char>((v >> 16) & 0xFF);
    p[3] = static_cast<unsigned char>((v >> 24) & 0xFF);
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace detail

// Loads the signal payload; record_id/patient_id/label stay at their defaults
// because that metadata lives in the manifest, not the binary.
inline EcgRecord load_record(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::IoFailure, "cannot open " + path);
    unsigned char hdr[detail::kEcgbHeaderSize];
    in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(hdr)))
        fail(Errc::TruncatedPayload, path + ": file shorter than the 16-byte header");
    if (std::memcmp(hdr, "ECGB", 4) != 0) fail(Errc::BadMagic, path + ": not an ECGB file");
    if (hdr[4] != 1)
        fail(Errc::UnsupportedVersion, path + ": version " + std::to_string(hdr[4]) + ", expected 1");
    EcgRecord r;
    r.n_leads = hdr[5];
    r.n_samples = detail::get_u32_le(hdr + 8);
    r.fs_hz = detail::get_u32_le(hdr + 12);
    const std::size_t n_values = static_cast<std::size_t>(r.n_leads) * r.n_samples;
    std::vector<unsigned char> payload(n_values * 4);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    const std::size_t got = static_cast<std::size_t>(in.gcount());
    if (got != payload.size() || in.peek() != std::ifstream::traits_type::eof())
        fail(Errc::TruncatedPayload, path + ": expected " + std::to_string(16 + payload.size()) +
                                         " bytes, got " + std::to_string(16 + got) +
                                         (got == payload.size() ? " plus trailing data" : ""));
    r.samples.resize(n_values);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(r.samples.data(), payload.data(), payload.size());
    } else {
        for (std::size_t i = 0; i < n_values; ++i) {
            std::uint32_t u = detail::get_u32_le(payload.data() + i * 4);
            r.samples[i] = std::bit_cast<float>(u);
        }
    }
    return r;
}

// Same load plus metadata join from a manifest entry; relative paths resolve
// against the manifest file's directory.
inline EcgRecord load_record(const ManifestEntry& e, const DatasetManifest& m) {
    std::filesystem::path p(e.path);
    if (p.is_relative() && !m.source_path.empty())
        p = std::filesystem::path(m.source_path).parent_path() / p;
    EcgRecord r = load_record(p.string());
    r.record_id = e.record_id;
    r.patient_id = e.patient_id;
    if (!e.is_binary_label())
        fail(Errc::InvariantViolation, e.record_id + ": label '" + e.label +
                                           "' is not binary; run label filtering first");
    r.label = e.is_afib() ? Label::AFIB : Label::NORM;
    return r;
}

inline void write_record(const EcgRecord& r, const std::string& path) {
    if (r.n_leads == 0 || r.n_leads > 255)
        fail(Errc::InvariantViolation, path + ": n_leads must be in [1,255], got " +
                                           std::to_string(r.n_leads));
    const std::size_t n_values = static_cast<std::size_t>(r.n_leads) * r.n_samples;
    if (r.samples.size() != n_values)
        fail(Errc::InvariantViolation, path + ": sample buffer size " +
                                           std::to_string(r.samples.size()) + " != n_leads*n_samples " +
                                           std::to_string(n_values));
    for (float s : r.samples)
        if (!std::isfinite(s)) fail(Errc::InvariantViolation, path + ": non-finite sample refused");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoFailure, "cannot open " + path + " for writing");
    unsigned char hdr[detail::kEcgbHeaderSize] = {};
    std::memcpy(hdr, "ECGB", 4);
    hdr[4] = 1;
    hdr[5] = static_cast<unsigned char>(r.n_leads);
    detail::put_u32_le(hdr + 8, r.n_samples);
    detail::put_u32_le(hdr + 12, r.fs_hz);
    out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(r.samples.data()),
                  static_cast<std::streamsize>(n_values * 4));
    } else {
        std::vector<unsigned char> payload(n_values * 4);
        for (std::size_t i = 0; i < n_values; ++i)
            detail::put_u32_le(payload.data() + i * 4, std::bit_cast<std::uint32_t>(r.samples[i]));
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size()));
    }
    out.flush();
    if (!out) fail(Errc::IoFailure, "write failed for " + path);
}

inline DatasetManifest read_manifest(const std::string& path) {
    csv::Table t = csv::read_file(path);
    for (const char* col : {"record_id", "patient_id", "label", "fs_hz", "path"}) t.col(col);
    DatasetManifest m;
    m.source_path = path;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        ManifestEntry e;
        e.record_id = t.at(i, "record_id");
        e.patient_id = t.at(i, "patient_id");
        e.label = t.at(i, "label");
        const std::string ctx = path + " row " + std::to_string(i + 1);
        long long fs = csv::parse_ll(t.at(i, "fs_hz"), ctx);
        if (fs <= 0) fail(Errc::UnparsableRow, ctx + ": fs_hz must be positive");
        e.fs_hz = static_cast<std::uint32_t>(fs);
        e.path = t.at(i, "path");
        if (!seen.insert(e.record_id).second)
            fail(Errc::DuplicateRecordId, path + ": duplicate record_id '" + e.record_id + "'");
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline void write_manifest(const DatasetManifest& m, const std::string& path,
                           const std::string& config_hash = "") {
    csv::Writer w(path);
    if (!config_hash.empty()) w.comment("config_hash=" + config_hash);
    w.row({"record_id", "patient_id", "label", "fs_hz", "path"});
    for (const auto& e : m.entries)
        w.row({e.record_id, e.patient_id, e.label, std::to_string(e.fs_hz), e.path});
    w.close();
}

} // namespace ecgfreq
