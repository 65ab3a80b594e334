#pragma once

#include <stdexcept>
#include <string>

namespace tafv {

// Input validation: always on, throws std::invalid_argument.
inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

// Internal consistency checks: enabled by TAFV_ASSERTS (kept on in release by
// default); violations indicate a scheduling or staging bug, not bad input.
#if defined(TAFV_ASSERTS) && TAFV_ASSERTS
#define TAFV_ASSERT(cond, what)                       \
  do {                                                \
    if (!(cond)) throw std::logic_error(what);        \
  } while (0)
#else
#define TAFV_ASSERT(cond, what)  \
  do {                           \
    (void)sizeof(!(cond));       \
  } while (0)
#endif

}  // namespace tafv
