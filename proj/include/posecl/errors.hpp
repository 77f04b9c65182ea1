#pragma once

#include <stdexcept>
#include <string>

namespace posecl {

/// Base of every error raised by the library. The category drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  enum class Category { usage, runtime, io };

  explicit Error(const std::string& what, Category category = Category::runtime)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

#define POSECL_DEFINE_ERROR(Name, Cat)                                        \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string& what) : Error(what, Category::Cat) {}    \
  };

POSECL_DEFINE_ERROR(DimensionError, runtime)
POSECL_DEFINE_ERROR(RankError, runtime)
POSECL_DEFINE_ERROR(TemperatureError, runtime)
POSECL_DEFINE_ERROR(NormalizationError, runtime)
POSECL_DEFINE_ERROR(NumericError, runtime)
POSECL_DEFINE_ERROR(SpecError, usage)
POSECL_DEFINE_ERROR(ExpansionError, runtime)
POSECL_DEFINE_ERROR(LookupError, runtime)
POSECL_DEFINE_ERROR(RegistryError, runtime)
POSECL_DEFINE_ERROR(ChannelError, runtime)
POSECL_DEFINE_ERROR(SchemaError, usage)
POSECL_DEFINE_ERROR(DataError, runtime)
POSECL_DEFINE_ERROR(ParseError, usage)
POSECL_DEFINE_ERROR(ConfigError, usage)
POSECL_DEFINE_ERROR(FormatError, io)
POSECL_DEFINE_ERROR(IoError, io)
POSECL_DEFINE_ERROR(IndexError, runtime)

#undef POSECL_DEFINE_ERROR

/// Raised when training produces a non-finite loss; carries the position.
class TrainingAbort : public Error {
 public:
  TrainingAbort(const std::string& what, int experience, int epoch, int batch)
      : Error(what, Category::runtime), experience_(experience), epoch_(epoch), batch_(batch) {}

  int experience() const noexcept { return experience_; }
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int experience_;
  int epoch_;
  int batch_;
};

}  // namespace posecl
