#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace langxai {

enum class ErrorCode {
  // domain
  DimensionMismatch,
  ValueOutOfRange,
  InvalidValue,
  EmptyPrediction,
  // model zoo
  DuplicateModelId,
  UnknownModel,
  AdapterFailure,
  GradientsUnsupported,
  // saliency
  ShapeMismatch,
  NonFiniteInput,
  InvalidParameter,
  TooLarge,
  TargetInvalid,
  LengthMismatch,
  UnknownMethod,
  DuplicateMethod,
  MethodNotApplicable,
  // prompt pipeline
  UnresolvableRef,
  TaskMismatch,
  // lvm gateway
  AuthError,
  RateLimited,
  Timeout,
  MalformedResponse,
  UpstreamError,
  DuplicateProvider,
  UnknownProvider,
  // text metrics
  EmbedderFailure,
  EmptyInput,
  // service
  MalformedAnnotation,
  MissingImage,
  NotFound,
  IntegrityError,
  StoreUnwritable,
  PortInUse,
  ParseError,
};

/// Stable snake_case name used on the wire and in CLI output.
inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
    case ErrorCode::ValueOutOfRange: return "value_out_of_range";
    case ErrorCode::InvalidValue: return "invalid_value";
    case ErrorCode::EmptyPrediction: return "empty_prediction";
    case ErrorCode::DuplicateModelId: return "duplicate_model_id";
    case ErrorCode::UnknownModel: return "model_not_found";
    case ErrorCode::AdapterFailure: return "adapter_failure";
    case ErrorCode::GradientsUnsupported: return "gradients_unsupported";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::NonFiniteInput: return "non_finite_input";
    case ErrorCode::InvalidParameter: return "invalid_parameter";
    case ErrorCode::TooLarge: return "too_large";
    case ErrorCode::TargetInvalid: return "target_invalid";
    case ErrorCode::LengthMismatch: return "length_mismatch";
    case ErrorCode::UnknownMethod: return "method_not_found";
    case ErrorCode::DuplicateMethod: return "duplicate_method";
    case ErrorCode::MethodNotApplicable: return "method_not_applicable";
    case ErrorCode::UnresolvableRef: return "unresolvable_ref";
    case ErrorCode::TaskMismatch: return "task_mismatch";
    case ErrorCode::AuthError: return "auth_error";
    case ErrorCode::RateLimited: return "rate_limited";
    case ErrorCode::Timeout: return "timeout";
    case ErrorCode::MalformedResponse: return "malformed_response";
    case ErrorCode::UpstreamError: return "upstream_error";
    case ErrorCode::DuplicateProvider: return "duplicate_provider";
    case ErrorCode::UnknownProvider: return "provider_not_found";
    case ErrorCode::EmbedderFailure: return "embedder_failure";
    case ErrorCode::EmptyInput: return "empty_input";
    case ErrorCode::MalformedAnnotation: return "malformed_annotation";
    case ErrorCode::MissingImage: return "missing_image";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::IntegrityError: return "integrity_error";
    case ErrorCode::StoreUnwritable: return "store_unwritable";
    case ErrorCode::PortInUse: return "port_in_use";
    case ErrorCode::ParseError: return "parse_error";
  }
  return "unknown";
}

/// Every failure raised by the library. `stage` is empty unless the error
/// crossed a pipeline stage boundary (see with_stage).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string stage = {})
      : std::runtime_error(message), code_(code), stage_(std::move(stage)) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view code_name() const noexcept { return error_code_name(code_); }
  const std::string& stage() const noexcept { return stage_; }

 private:
  ErrorCode code_;
  std::string stage_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

/// Runs `fn`, re-throwing any failure tagged with `stage`. Non-library
/// exceptions become AdapterFailure.
template <typename Fn>
decltype(auto) with_stage(std::string_view stage, Fn&& fn) {
  try {
    return std::forward<Fn>(fn)();
  } catch (const Error& e) {
    if (!e.stage().empty()) throw;
    throw Error(e.code(), std::string(stage) + ": " + e.what(), std::string(stage));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::AdapterFailure, std::string(stage) + ": " + e.what(),
                std::string(stage));
  }
}

}  // namespace langxai
