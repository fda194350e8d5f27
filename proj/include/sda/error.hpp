#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace sda {

// Error kinds map one-to-one onto CLI exit codes.
enum class ErrorKind { config, domain, numerical, io, parse };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& what) : Error(ErrorKind::domain, what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorKind::parse, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// -----------------------------------------------------------------------------
// Minimal process-wide log sink. Tests swap the sink to capture warnings.

enum class LogLevel { info, warning, error };

using LogSink = std::function<void(LogLevel, const std::string&)>;

inline LogSink& log_sink() {
  static LogSink sink = [](LogLevel level, const std::string& msg) {
    const char* tag = level == LogLevel::info ? "info" : level == LogLevel::warning ? "warning" : "error";
    std::clog << "[sda:" << tag << "] " << msg << '\n';
  };
  return sink;
}

inline void log(LogLevel level, const std::string& msg) {
  if (log_sink()) log_sink()(level, msg);
}

inline void warn(const std::string& msg) { log(LogLevel::warning, msg); }

}  // namespace sda
