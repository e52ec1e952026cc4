#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace webformer {

/// Base for every error raised by the library. The CLI maps each subclass to
/// its own nonzero exit code through `exit_code()`.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

#define WEBFORMER_DEFINE_ERROR(Name, Code)                          \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    int exit_code() const noexcept override { return Code; }        \
  };

WEBFORMER_DEFINE_ERROR(ConfigError, 2)
WEBFORMER_DEFINE_ERROR(IOError, 3)
WEBFORMER_DEFINE_ERROR(EmptyDocument, 4)
WEBFORMER_DEFINE_ERROR(EmptyDataset, 5)
WEBFORMER_DEFINE_ERROR(VocabError, 6)
WEBFORMER_DEFINE_ERROR(ShapeError, 7)
WEBFORMER_DEFINE_ERROR(StaleTapeError, 8)
WEBFORMER_DEFINE_ERROR(LabelError, 9)
WEBFORMER_DEFINE_ERROR(InvalidGold, 10)
WEBFORMER_DEFINE_ERROR(CorruptCheckpoint, 11)
WEBFORMER_DEFINE_ERROR(VocabHashError, 12)
WEBFORMER_DEFINE_ERROR(DataQualityError, 13)
WEBFORMER_DEFINE_ERROR(GradCheckFailure, 14)

#undef WEBFORMER_DEFINE_ERROR

/// Malformed dataset line. `line()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("ParseError(line=" + std::to_string(line) + "): " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }
  int exit_code() const noexcept override { return 15; }

 private:
  std::size_t line_;
};

}  // namespace webformer
