#include "statark/cli/tokenizer.hpp"

#include <cstdio>

#include "statark/error.hpp"

namespace statark::cli {

ByteTokenizer::ByteTokenizer(int64_t vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size < 256) {
    throw Error("byte tokenizer needs a vocabulary of at least 256, model has " + std::to_string(vocab_size) +
                "; pass --prompt-ids instead");
  }
}

std::vector<int64_t> ByteTokenizer::encode(std::string_view text) const {
  std::vector<int64_t> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

std::string ByteTokenizer::decode(std::span<const int64_t> ids) const {
  std::string out;
  for (int64_t id : ids) {
    if (id < 0 || id >= vocab_size_) throw Error("token id " + std::to_string(id) + " outside the vocabulary");
    if (id < 256) {
      out.push_back(static_cast<char>(id));
    } else {
      out += "<|" + std::to_string(id) + "|>";
    }
  }
  return out;
}

std::string printable(std::string_view bytes) {
  std::string out;
  for (char c : bytes) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x20 && u < 0x7f) {
      out.push_back(c);
    } else {
      char buf[5];
      std::snprintf(buf, sizeof buf, "\\x%02x", u);
      out += buf;
    }
  }
  return out;
}

pipeline::ChatTemplate default_chat_template(int64_t vocab_size) {
  if (vocab_size < 260) {
    throw Error("the built-in chat template needs ids 256..259; give a --template for a vocabulary of " +
                std::to_string(vocab_size));
  }
  pipeline::ChatTemplate t;
  t.system_prefix = {256};
  t.user_prefix = {257};
  t.assistant_prefix = {258};
  t.turn_suffix = {259};
  t.stop = {259};
  return t;
}

}  // namespace statark::cli
