#pragma once

// Error taxonomy shared by every module. Each failure carries a stable code
// so the CLI can map it onto a process exit status without string matching.

#include <stdexcept>
#include <string>

namespace ecgfreq {

enum class Errc {
    // generic / config
    ConfigError,
    MissingStage,
    DataError,
    IoFailure,
    InvariantViolation,
    // ecg_store
    BadMagic,
    UnsupportedVersion,
    TruncatedPayload,
    MissingColumn,
    DuplicateRecordId,
    UnparsableRow,
    BadCheckpoint,
    // preprocess
    NonPositiveLimit,
    TooShort,
    NonPositiveTarget,
    // cohort
    FsMismatch,
    EmptyManifest,
    SingleClassInput,
    TooFewPatients,
    // models
    InputTooShort,
    NonFiniteActivation,
    // trainer
    PatientLeak,
    DivergedLoss,
    NonFiniteLogit,
    // metrics
    EmptyMatrix,
    SingleClass,
    DegenerateCurve,
    EmptyInput,
    MisalignedRecords,
    FoldCountMismatch,
    OverlapDetected,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::ConfigError: return "ConfigError";
        case Errc::MissingStage: return "MissingStage";
        case Errc::DataError: return "DataError";
        case Errc::IoFailure: return "IoFailure";
        case Errc::InvariantViolation: return "InvariantViolation";
        case Errc::BadMagic: return "BadMagic";
        case Errc::UnsupportedVersion: return "UnsupportedVersion";
        case Errc::TruncatedPayload: return "TruncatedPayload";
        case Errc::MissingColumn: return "MissingColumn";
        case Errc::DuplicateRecordId: return "DuplicateRecordId";
        case Errc::UnparsableRow: return "UnparsableRow";
        case Errc::BadCheckpoint: return "BadCheckpoint";
        case Errc::NonPositiveLimit: return "NonPositiveLimit";
        case Errc::TooShort: return "TooShort";
        case Errc::NonPositiveTarget: return "NonPositiveTarget";
        case Errc::FsMismatch: return "FsMismatch";
        case Errc::EmptyManifest: return "EmptyManifest";
        case Errc::SingleClassInput: return "SingleClassInput";
        case Errc::TooFewPatients: return "TooFewPatients";
        case Errc::InputTooShort: return "InputTooShort";
        case Errc::NonFiniteActivation: return "NonFiniteActivation";
        case Errc::PatientLeak: return "PatientLeak";
        case Errc::DivergedLoss: return "DivergedLoss";
        case Errc::NonFiniteLogit: return "NonFiniteLogit";
        case Errc::EmptyMatrix: return "EmptyMatrix";
        case Errc::SingleClass: return "SingleClass";
        case Errc::DegenerateCurve: return "DegenerateCurve";
        case Errc::EmptyInput: return "EmptyInput";
        case Errc::MisalignedRecords: return "MisalignedRecords";
        case Errc::FoldCountMismatch: return "FoldCountMismatch";
        case Errc::OverlapDetected: return "OverlapDetected";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

} // namespace ecgfreq
