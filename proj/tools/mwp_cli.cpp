// mwp: prepare / pretrain / train / eval / solve

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mwp/mwp.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<int> type;
    std::optional<std::string> notation;
    bool pretrain = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> iterations;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config,-c", o.config, "run manifest (key = value lines)")->required();
    cmd->add_option("--type", o.type, "Transformer type")->check(CLI::Range(1, 3));
    cmd->add_option("--notation", o.notation, "target notation")->check(CLI::IsMember({"infix", "prefix", "postfix"}));
    cmd->add_flag("--pretrain", o.pretrain, "start fine-tuning from the pre-trained checkpoint");
    cmd->add_option("--seed", o.seed, "run seed");
    cmd->add_option("--iterations", o.iterations, "epochs for this command");
    cmd->add_option("--out", o.out, "output directory");
}

mwp::RunManifest resolve(const Overrides& o, bool pretrain_command = false) {
    mwp::RunManifest m = mwp::RunManifest::load(o.config);
    if (o.type) m.type = *o.type;
    if (o.notation) m.notation = *mwp::notation_from_string(*o.notation);
    if (o.pretrain) m.pretrain = true;
    if (o.seed) m.seed = *o.seed;
    if (o.iterations) (pretrain_command ? m.pretrain_iterations : m.iterations) = *o.iterations;
    if (o.out) m.out = *o.out;
    return m;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        return mwp::kExitOk;
    } catch (const mwp::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return mwp::kExitUsage;
    } catch (const mwp::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return mwp::kExitData;
    } catch (const mwp::CorpusError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return mwp::kExitData;
    } catch (const mwp::TaggingError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return mwp::kExitData;
    } catch (const mwp::TokenizerError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return mwp::kExitData;
    } catch (const mwp::CheckpointError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return mwp::kExitData;
    } catch (const mwp::ExpressionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return mwp::kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return mwp::kExitRuntime;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Math word problem to expression translation with a Transformer"};
    app.require_subcommand(1);

    Overrides prep_o, pre_o, train_o, eval_o;
    auto* prep = app.add_subcommand("prepare", "tag datasets, build vocabulary and splits");
    add_common(prep, prep_o);
    auto* pre = app.add_subcommand("pretrain", "empty-target pre-training on plain text");
    add_common(pre, pre_o);
    auto* trn = app.add_subcommand("train", "train on the prepared splits");
    add_common(trn, train_o);
    int repetition = 0;
    bool resume = false;
    trn->add_option("--repetition", repetition, "train only this repetition (default: all)");
    trn->add_flag("--resume", resume, "continue from rep<R>/model.ckpt");
    auto* evl = app.add_subcommand("eval", "score every repetition on its test split");
    add_common(evl, eval_o);

    auto* slv = app.add_subcommand("solve", "translate and evaluate one question");
    std::string checkpoint, vocab, question;
    std::size_t max_len = 64;
    bool number_words = false;
    slv->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    slv->add_option("--vocab", vocab, "vocabulary file")->required();
    slv->add_option("--question,-q", question, "word problem text")->required();
    slv->add_option("--max-len", max_len, "decode budget in tokens");
    slv->add_flag("--number-words", number_words, "also tag spelled-out numbers");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? mwp::kExitOk : mwp::kExitUsage;
    }

    if (prep->parsed()) return guarded([&] { mwp::cmd_prepare(resolve(prep_o)); });
    if (pre->parsed()) return guarded([&] { mwp::cmd_pretrain(resolve(pre_o, true)); });
    if (trn->parsed()) return guarded([&] { mwp::cmd_train(resolve(train_o), repetition, resume); });
    if (evl->parsed()) return guarded([&] { mwp::cmd_eval(resolve(eval_o)); });

    int rc = mwp::kExitOk;
    const int guard = guarded([&] {
        const auto ck = mwp::load_checkpoint(checkpoint);
        const auto v = mwp::SubwordVocabulary::load(vocab);
        mwp::TaggingOptions topts;
        topts.number_words = number_words;
        const auto s = mwp::solve(ck, v, question, max_len, topts);
        std::cout << "tagged question: " << s.tagged_question << "\n";
        std::cout << "tagged expression: " << s.tagged_expression << "\n";
        if (!s.failure.empty()) {
            std::cout << "expression: " << s.expression << "\n";
            std::cerr << "solver failure: " << s.failure << "\n";
            rc = mwp::kExitRuntime;
            return;
        }
        std::cout << "expression: " << s.expression << "\n";
        std::cout << "answer: " << mwp::format_number(*s.answer) << "\n";
    });
    return guard != mwp::kExitOk ? guard : rc;
}
