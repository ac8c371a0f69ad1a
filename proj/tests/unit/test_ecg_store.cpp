#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ecgfreq/ecg_store.hpp"
#include "ecgfreq/errors.hpp"
#include "ecgfreq/rng.hpp"
#include "oracles.hpp"

using namespace ecgfreq;

namespace {

EcgRecord make_record(std::uint8_t leads, std::uint32_t samples, std::uint32_t fs,
                      std::uint64_t seed) {
    EcgRecord r;
    r.record_id = "rec";
    r.patient_id = "pat";
    r.label = Label::NORM;
    r.fs_hz = fs;
    r.n_leads = leads;
    r.n_samples = samples;
    r.samples.resize(static_cast<std::size_t>(leads) * samples);
    SplitMix64 rng(seed);
    for (float& v : r.samples) v = static_cast<float>(rng.uniform(-2, 2));
    return r;
}

Errc thrown_code(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an ecgfreq::Error");
    return Errc::InvariantViolation;
}

}  // namespace

TEST_CASE("ECGB record round trip preserves payload bit-exactly") {
    oracle::TempDir td("store");
    EcgRecord r = make_record(12, 500, 250, 1);
    write_record(r, td.str("a.ecgb"));
    EcgRecord back = load_record(td.str("a.ecgb"));
    CHECK(back.n_leads == 12);
    CHECK(back.n_samples == 500);
    CHECK(back.fs_hz == 250);
    REQUIRE(back.samples.size() == r.samples.size());
    for (std::size_t i = 0; i < r.samples.size(); ++i) CHECK(back.samples[i] == r.samples[i]);
}

TEST_CASE("ECGB header layout: 16 bytes, magic, little-endian fields") {
    oracle::TempDir td("store");
    EcgRecord r = make_record(3, 7, 100, 2);
    write_record(r, td.str("h.ecgb"));

    std::ifstream in(td.str("h.ecgb"), std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() == 16 + 4u * 3 * 7);
    CHECK(bytes[0] == 'E');
    CHECK(bytes[1] == 'C');
    CHECK(bytes[2] == 'G');
    CHECK(bytes[3] == 'B');
    CHECK(bytes[4] == 1);  // version
    CHECK(bytes[5] == 3);  // n_leads
    const std::uint32_t n_samples = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) |
                                    (static_cast<std::uint32_t>(bytes[11]) << 24);
    const std::uint32_t fs = bytes[12] | (bytes[13] << 8) | (bytes[14] << 16) |
                             (static_cast<std::uint32_t>(bytes[15]) << 24);
    CHECK(n_samples == 7);
    CHECK(fs == 100);
}

TEST_CASE("load_record rejects corrupt files with precise codes") {
    oracle::TempDir td("store");
    EcgRecord r = make_record(2, 5, 100, 3);
    write_record(r, td.str("good.ecgb"));

    auto clone_with = [&](const std::string& name, auto mutate) {
        std::ifstream in(td.str("good.ecgb"), std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        mutate(bytes);
        std::ofstream out(td.str(name), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };

    clone_with("badmagic.ecgb", [](std::vector<char>& b) { b[0] = 'X'; });
    CHECK(thrown_code([&] { load_record(td.str("badmagic.ecgb")); }) == Errc::BadMagic);

    clone_with("badver.ecgb", [](std::vector<char>& b) { b[4] = 9; });
    CHECK(thrown_code([&] { load_record(td.str("badver.ecgb")); }) == Errc::UnsupportedVersion);

    clone_with("short.ecgb", [](std::vector<char>& b) { b.resize(b.size() - 3); });
    CHECK(thrown_code([&] { load_record(td.str("short.ecgb")); }) == Errc::TruncatedPayload);

    clone_with("long.ecgb", [](std::vector<char>& b) { b.push_back(0); });
    CHECK(thrown_code([&] { load_record(td.str("long.ecgb")); }) == Errc::TruncatedPayload);
}

TEST_CASE("write_record refuses invalid records") {
    oracle::TempDir td("store");
    EcgRecord r = make_record(2, 5, 100, 4);
    r.samples[3] = std::numeric_limits<float>::infinity();
    CHECK(thrown_code([&] { write_record(r, td.str("x.ecgb")); }) == Errc::InvariantViolation);

    EcgRecord wrong = make_record(2, 5, 100, 5);
    wrong.samples.pop_back();
    CHECK(thrown_code([&] { write_record(wrong, td.str("y.ecgb")); }) == Errc::InvariantViolation);
}

TEST_CASE("lead accessor points at contiguous lead-major rows") {
    EcgRecord r = make_record(3, 4, 10, 6);
    for (std::uint32_t l = 0; l < 3; ++l)
        for (std::uint32_t t = 0; t < 4; ++t)
            CHECK(r.lead(l)[t] == r.samples[l * 4 + t]);
}

TEST_CASE("manifest round trip with labels, including non-binary ones") {
    oracle::TempDir td("store");
    DatasetManifest m;
    m.entries.push_back({"r1", "p1", "AFIB", 500, "records/r1.ecgb"});
    m.entries.push_back({"r2", "p1", "NORM", 500, "records/r2.ecgb"});
    m.entries.push_back({"r3", "p2", "PACE", 500, "records/r3.ecgb"});
    write_manifest(m, td.str("m.csv"), "cafe");
    DatasetManifest back = read_manifest(td.str("m.csv"));
    REQUIRE(back.entries.size() == 3);
    CHECK(back.entries[0].record_id == "r1");
    CHECK(back.entries[0].is_afib());
    CHECK(back.entries[1].is_binary_label());
    CHECK_FALSE(back.entries[2].is_binary_label());
    CHECK(back.entries[2].fs_hz == 500);
    CHECK(back.source_path == td.str("m.csv"));
}

TEST_CASE("read_manifest rejects duplicates and malformed rows") {
    oracle::TempDir td("store");
    {
        std::ofstream f(td.str("dup.csv"));
        f << "record_id,patient_id,label,fs_hz,path\nr1,p1,NORM,500,a\nr1,p2,AFIB,500,b\n";
    }
    CHECK(thrown_code([&] { read_manifest(td.str("dup.csv")); }) == Errc::DuplicateRecordId);
    {
        std::ofstream f(td.str("badfs.csv"));
        f << "record_id,patient_id,label,fs_hz,path\nr1,p1,NORM,0,a\n";
    }
    CHECK_THROWS_AS(read_manifest(td.str("badfs.csv")), Error);
    {
        std::ofstream f(td.str("nocol.csv"));
        f << "record_id,patient_id,label\nr1,p1,NORM\n";
    }
    CHECK(thrown_code([&] { read_manifest(td.str("nocol.csv")); }) == Errc::MissingColumn);
}

TEST_CASE("load_record(entry, manifest) resolves relative paths and joins metadata") {
    oracle::TempDir td("store");
    std::filesystem::create_directories(td.path() / "records");
    EcgRecord r = make_record(2, 10, 100, 7);
    write_record(r, td.str("records/r1.ecgb"));
    DatasetManifest m;
    m.source_path = td.str("m.csv");
    m.entries.push_back({"r1", "p9", "AFIB", 100, "records/r1.ecgb"});
    EcgRecord got = load_record(m.entries[0], m);
    CHECK(got.record_id == "r1");
    CHECK(got.patient_id == "p9");
    CHECK(got.label == Label::AFIB);
    CHECK(got.n_samples == 10);

    DatasetManifest bad = m;
    bad.entries[0].label = "PACE";
    CHECK_THROWS_AS(load_record(bad.entries[0], bad), Error);
}
