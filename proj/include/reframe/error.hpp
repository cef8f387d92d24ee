#pragma once

#include <stdexcept>
#include <string>

namespace reframe {

enum class ErrorKind {
  invalid_input,  // malformed documents, bad parameters
  not_found,      // unknown tracklet, actor, rush, project, job
  conflict,       // an operation would break a stored invariant
  infeasible,     // optimisation problem has no feasible point
  io,             // storage or filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace reframe
