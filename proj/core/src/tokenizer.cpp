#include "iti/tokenizer.hpp"

namespace iti {

std::vector<Token> ByteTokenizer::encode(std::string_view text) const {
    std::vector<Token> out;
    out.reserve(text.size());
    for (char c : text) {
        out.push_back(static_cast<Token>(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string ByteTokenizer::decode(std::span<const Token> tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (Token t : tokens) {
        if (t >= 0 && t < 256) {
            out.push_back(static_cast<char>(t));
        }
    }
    return out;
}

} // namespace iti
