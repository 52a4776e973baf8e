#include "subvae/tensor.hpp"

namespace subvae {

namespace {
thread_local bool g_grad_enabled = true;
}

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape:
      return "shape";
    case ErrorKind::precondition:
      return "precondition";
    case ErrorKind::io:
      return "io";
    case ErrorKind::config:
      return "config";
    case ErrorKind::data:
      return "data";
  }
  return "unknown";
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index extent : shape) {
    if (extent < 0) throw Error(ErrorKind::shape, "negative extent in shape " + to_string(shape));
    n *= extent;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace subvae
