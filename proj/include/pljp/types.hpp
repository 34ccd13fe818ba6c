#pragma once

// Core data model shared by every pipeline stage.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pljp {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The three chained sub-tasks, in dependency order.
enum class Task : std::uint8_t { article = 0, charge = 1, term = 2 };

inline constexpr std::array<Task, 3> kAllTasks = {Task::article, Task::charge, Task::term};

std::string_view task_name(Task task);
Task parse_task(std::string_view name);
inline std::size_t task_index(Task task) { return static_cast<std::size_t>(task); }

/// Label identifiers are kept as strings for every task: article numbers
/// ("264"), charge names ("theft") and term bin indices ("3").
using LabelId = std::string;

/// A judgment triple (article, charge, term bin).
struct Verdict {
  LabelId article;
  LabelId charge;
  LabelId term;

  const LabelId& operator[](Task task) const;
  LabelId& operator[](Task task);
  bool operator==(const Verdict&) const = default;
};

/// Raw dataset record.
struct Case {
  std::string id;
  std::string fact;
  int article = 0;
  std::string charge;
  int term_months = 0;  // -1 life imprisonment, -2 death penalty
  std::string date;     // YYYY-MM-DD

  bool operator==(const Case&) const = default;
};

inline constexpr int kLifeSentence = -1;
inline constexpr int kDeathSentence = -2;

/// Fact summary along the subjective / objective / aftermath axes.
struct ReorganizedFact {
  std::string sub;
  std::string obj;
  std::string ex;
  std::string source_case_id;

  bool operator==(const ReorganizedFact&) const = default;
};

}  // namespace pljp
