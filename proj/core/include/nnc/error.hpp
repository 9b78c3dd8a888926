#pragma once

#include <stdexcept>
#include <string>

namespace nnc {

/// Data-level failure (malformed documents, shape conflicts, protocol
/// violations). The CLI maps these to exit code 2.
class Error : public std::runtime_error {
public:
    enum class Code {
        UnknownOp,
        ShapeMismatch,
        MissingSeed,
        BadMagic,
        TruncatedTensor,
        DuplicateName,
        RankError,
        ExtentMismatch,
        UnknownSymbol,
        IllegalOverride,
        NoBackend,
        UnsupportedInGroup,
        NonDifferentiable,
        UnboundVdim,
        ArenaOverflow,
        MissingGrad,
        BadToken,
        BadDocument,
    };

    Error(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

} // namespace nnc
