#pragma once

namespace ssmlab {

inline const char* version_string() {
#ifdef SSMLAB_GIT_VERSION
  return SSMLAB_GIT_VERSION;
#else
  return "unknown";
#endif
}

}  // namespace ssmlab
