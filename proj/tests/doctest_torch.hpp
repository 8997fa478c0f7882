#pragma once

// libtorch's logging header defines glog-style CHECK macros that collide with
// doctest's. Pull torch in first, drop its macros, then define doctest's.
#include <torch/torch.h>

#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LE
#undef CHECK_LT
#undef CHECK_GE
#undef CHECK_GT

#include <doctest.h>
