#pragma once

#include <stdexcept>
#include <string>

namespace rpmesh {

enum class Errc {
    InvalidKeyword,
    InvalidIndex,
    ProfileTooWide,
    IncompatibleNetwork,
    LookupFailed,
    ReplicationDegraded,
    PostFailed,
    PayloadTooLarge,
    AppendFailed,
    OffsetTrimmed,
    QueueCorrupt,
    StoreFailed,
    ParseError,
    EvalError,
    ProtocolError,
    FunctionStartFailed,
    StreamBroken,
    ScenarioError,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

}  // namespace rpmesh
