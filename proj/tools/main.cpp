#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tsa/runner.hpp"

using namespace tsa;
using namespace tsa::runner;

int main(int argc, char** argv) {
  CLI::App app{"span-based targeted sentiment analysis toolkit"};
  // key=value config file, sections per subcommand ([train] ...); flags
  // override file values. Must precede the subcommand on the command line.
  app.set_config("--config", "", "key=value config file; flags override it");
  app.require_subcommand(1);

  auto add_subcommand = [&](const std::string& name, const std::string& help) {
    return app.add_subcommand(name, help);
  };

  int exit_code = 0;

  // synth --------------------------------------------------------------
  auto synth = std::make_shared<SynthOpts>();
  {
    CLI::App* cmd = add_subcommand("synth", "generate a synthetic corpus");
    cmd->add_option("--sentences", synth->config.sentences, "sentence count");
    cmd->add_option("--seed", synth->seed, "generation seed");
    cmd->add_option("--min-len", synth->config.min_sentence_len, "minimum words per sentence");
    cmd->add_option("--max-len", synth->config.max_sentence_len, "maximum words per sentence");
    cmd->add_option("--adjacency-rate", synth->config.adjacency_rate,
                    "probability of the '<marker> X and Y' pattern");
    cmd->add_option("--filler-words", synth->config.filler_words, "filler vocabulary size");
    cmd->add_option("--target-words", synth->config.target_words, "target vocabulary size");
    cmd->add_option("-o,--output", synth->output, "corpus JSONL path")->required();
    cmd->callback([synth] { run_synth(*synth); });
  }

  // convert ------------------------------------------------------------
  auto convert = std::make_shared<ConvertOpts>();
  {
    CLI::App* cmd = add_subcommand("convert", "corpus to tag lines");
    cmd->add_option("-c,--corpus", convert->input, "corpus JSONL")->required();
    cmd->add_option("--scheme", convert->scheme, "bio | biop | collapsed");
    cmd->add_option("-o,--output", convert->output, "output path (stdout when absent)");
    cmd->callback([convert] { run_convert(*convert); });
  }

  // validate -----------------------------------------------------------
  auto validate = std::make_shared<ValidateOpts>();
  {
    CLI::App* cmd = add_subcommand("validate", "check a corpus file");
    cmd->add_option("-c,--corpus", validate->input, "corpus JSONL")->required();
    cmd->callback([validate, &exit_code] {
      if (run_validate(*validate) > 0) exit_code = 1;
    });
  }

  // kfold ---------------------------------------------------------------
  auto kfold = std::make_shared<KfoldOpts>();
  {
    CLI::App* cmd = add_subcommand("kfold", "write cross-validation folds");
    cmd->add_option("-c,--corpus", kfold->input, "corpus JSONL")->required();
    cmd->add_option("-k,--folds", kfold->k, "fold count");
    cmd->add_option("--seed", kfold->seed, "shuffle seed");
    cmd->add_option("-o,--output-dir", kfold->output_dir, "fold file directory")->required();
    cmd->callback([kfold] { run_kfold(*kfold); });
  }

  // train ---------------------------------------------------------------
  auto train_opts = std::make_shared<TrainOpts>();
  auto variant_str = std::make_shared<std::string>("joint");
  auto tag_shape_str = std::make_shared<std::string>("joint");
  auto classifier_decoded = std::make_shared<bool>(false);
  {
    CLI::App* cmd = add_subcommand("train", "train a model variant");
    cmd->add_option("-c,--corpus", train_opts->corpus, "training corpus JSONL")->required();
    cmd->add_option("-o,--output", train_opts->output, "checkpoint path")->required();
    cmd->add_option("--variant", *variant_str, "pipeline | joint | collapsed | tag");
    cmd->add_option("--tag-shape", *tag_shape_str, "bio | pipeline | joint | collapsed");
    TrainConfig& tc = train_opts->config;
    cmd->add_option("--epochs", tc.epochs, "training epochs");
    cmd->add_option("--batch-size", tc.batch_size, "sentences per optimizer step");
    cmd->add_option("--learning-rate", tc.learning_rate, "base learning rate");
    cmd->add_option("--warmup-fraction", tc.warmup_fraction, "warmup share of total steps");
    cmd->add_option("--seed", tc.seed, "run seed");
    cmd->add_option("--layers", tc.encoder.layers, "encoder blocks");
    cmd->add_option("--hidden", tc.encoder.hidden, "hidden size");
    cmd->add_option("--heads", tc.encoder.attn_heads, "attention heads");
    cmd->add_option("--ffn-multiplier", tc.encoder.ffn_multiplier, "feed-forward width factor");
    cmd->add_option("--dropout", tc.encoder.dropout, "dropout rate");
    cmd->add_option("--max-positions", tc.encoder.max_positions, "maximum token positions");
    cmd->add_option("--max-tokens", tc.tokenizer.max_tokens, "reject longer sentences");
    cmd->add_option("--vocab-size", tc.tokenizer.max_size, "vocabulary cap");
    cmd->add_flag("--subword", tc.tokenizer.subword, "greedy subword pieces for OOV words");
    cmd->add_flag("--lowercase", tc.tokenizer.lowercase, "lowercase all words");
    cmd->add_flag("--classifier-decoded-spans", *classifier_decoded,
                  "joint: train the classifier on decoded instead of gold spans");
    cmd->add_flag("-v,--verbose", [train_opts](std::int64_t) { train_opts->quiet = false; },
                  "print the per-epoch loss trace");
    cmd->callback([train_opts, variant_str, tag_shape_str, classifier_decoded] {
      auto v = variant_from_name(*variant_str);
      if (!v) throw CLI::ValidationError("--variant", "unknown variant '" + *variant_str + "'");
      train_opts->config.variant = *v;
      auto shape = tag_shape_from_name(*tag_shape_str);
      if (!shape)
        throw CLI::ValidationError("--tag-shape", "unknown tag shape '" + *tag_shape_str + "'");
      train_opts->config.tag_shape = *shape;
      train_opts->config.classifier_gold_spans = !*classifier_decoded;
      run_train(*train_opts);
    });
  }

  auto add_decode_flags = [](CLI::App* cmd, DecodeConfig& dc) {
    cmd->add_option("--gamma", dc.gamma, "minimum start+end score");
    cmd->add_option("--top-m", dc.top_m, "boundary indices per side");
    cmd->add_option("--max-spans", dc.max_spans, "maximum proposed targets");
    cmd->add_flag("--no-length-penalty", [&dc](std::int64_t) { dc.length_penalty = false; },
                  "disable the span length heuristic");
    cmd->add_flag("--no-nms", [&dc](std::int64_t) { dc.nms = false; },
                  "disable non-maximum suppression");
    cmd->add_flag("--no-cross-resolve",
                  [&dc](std::int64_t) { dc.resolve_cross_polarity = false; },
                  "collapsed: keep overlapping spans from different polarities");
  };

  // decode ---------------------------------------------------------------
  auto decode_opts = std::make_shared<DecodeOpts>();
  auto decode_vectors = std::make_shared<std::string>();
  {
    CLI::App* cmd = add_subcommand("decode", "extract and classify spans");
    cmd->add_option("-m,--model", decode_opts->checkpoint, "checkpoint")->required();
    cmd->add_option("-c,--corpus", decode_opts->corpus, "corpus JSONL")->required();
    cmd->add_option("-o,--output", decode_opts->output, "predictions JSONL")->required();
    cmd->add_option("--vectors", *decode_vectors, "precomputed encoding file");
    cmd->add_option("--threads", decode_opts->threads, "worker threads");
    cmd->add_flag("-v,--verbose", decode_opts->verbose,
                  "also print spans with 1-based positions");
    add_decode_flags(cmd, decode_opts->decode);
    cmd->callback([decode_opts, decode_vectors] {
      if (!decode_vectors->empty()) decode_opts->vectors = *decode_vectors;
      run_decode(*decode_opts);
    });
  }

  // tag-decode -----------------------------------------------------------
  auto tag_decode_opts = std::make_shared<DecodeOpts>();
  {
    CLI::App* cmd = add_subcommand("tag-decode", "decode with the tagging baseline");
    cmd->add_option("-m,--model", tag_decode_opts->checkpoint, "checkpoint")->required();
    cmd->add_option("-c,--corpus", tag_decode_opts->corpus, "corpus JSONL")->required();
    cmd->add_option("-o,--output", tag_decode_opts->output, "predictions JSONL")->required();
    cmd->add_option("--threads", tag_decode_opts->threads, "worker threads");
    cmd->callback([tag_decode_opts] {
      tag_decode_opts->tag_mode = true;
      run_decode(*tag_decode_opts);
    });
  }

  // classify ---------------------------------------------------------------
  auto classify_opts = std::make_shared<ClassifyOpts>();
  auto classify_vectors = std::make_shared<std::string>();
  {
    CLI::App* cmd = add_subcommand("classify", "polarity over gold spans");
    cmd->add_option("-m,--model", classify_opts->checkpoint, "checkpoint")->required();
    cmd->add_option("-c,--corpus", classify_opts->corpus, "corpus JSONL")->required();
    cmd->add_option("-o,--output", classify_opts->output, "polarities JSONL")->required();
    cmd->add_option("--report", classify_opts->report, "accuracy report JSON");
    cmd->add_option("--vectors", *classify_vectors, "precomputed encoding file");
    cmd->add_option("--edges", classify_opts->edges, "target-word bucket edges");
    cmd->add_option("--threads", classify_opts->threads, "worker threads");
    cmd->callback([classify_opts, classify_vectors] {
      if (!classify_vectors->empty()) classify_opts->vectors = *classify_vectors;
      run_classify(*classify_opts);
    });
  }

  // evaluate ---------------------------------------------------------------
  auto eval_opts = std::make_shared<EvaluateOpts>();
  auto eval_axis = std::make_shared<std::string>();
  {
    CLI::App* cmd = add_subcommand("evaluate", "score predictions against gold");
    cmd->add_option("--pred", eval_opts->pred, "predictions JSONL");
    cmd->add_option("--gold", eval_opts->gold, "gold corpus JSONL");
    cmd->add_option("--report", eval_opts->report, "report JSON output");
    cmd->add_option("--axis", *eval_axis, "sentence_length | target_words");
    cmd->add_option("--edges", eval_opts->edges, "bucket edges");
    cmd->add_option("--aggregate", eval_opts->aggregate, "fold report files to average");
    cmd->add_option("--threads", eval_opts->threads, "worker threads");
    cmd->callback([eval_opts, eval_axis] {
      if (!eval_axis->empty()) eval_opts->axis = *eval_axis;
      if (eval_opts->aggregate.empty() && (eval_opts->pred.empty() || eval_opts->gold.empty()))
        throw CLI::ValidationError("evaluate", "need --pred and --gold, or --aggregate");
      run_evaluate(*eval_opts);
    });
  }

  // sweep --------------------------------------------------------------------
  auto sweep_opts = std::make_shared<SweepOpts>();
  auto ablate_joined = std::make_shared<std::string>("nms,length");
  {
    CLI::App* cmd = add_subcommand("sweep", "gamma precision-recall sweep");
    cmd->add_option("-m,--model", sweep_opts->checkpoint, "checkpoint")->required();
    cmd->add_option("-c,--corpus", sweep_opts->corpus, "corpus JSONL")->required();
    cmd->add_option("-o,--output", sweep_opts->output, "CSV output")->required();
    cmd->add_option("--gammas", sweep_opts->gammas, "grid as a:b:step");
    cmd->add_option("--ablate", *ablate_joined, "comma list from {nms,length}");
    cmd->add_option("--top-m", sweep_opts->decode.top_m, "boundary indices per side");
    cmd->add_option("--max-spans", sweep_opts->decode.max_spans, "maximum proposed targets");
    cmd->add_option("--threads", sweep_opts->threads, "worker threads");
    cmd->callback([sweep_opts, ablate_joined] {
      sweep_opts->ablate.clear();
      std::string item;
      for (char c : *ablate_joined + ",") {
        if (c == ',') {
          if (!item.empty()) sweep_opts->ablate.push_back(item);
          item.clear();
        } else {
          item += c;
        }
      }
      run_sweep(*sweep_opts);
    });
  }

  // check-grad ------------------------------------------------------------------
  auto grad_opts = std::make_shared<CheckGradOpts>();
  {
    CLI::App* cmd = add_subcommand("check-grad", "finite-difference gradient verification");
    cmd->add_option("--seed", grad_opts->seed, "fixture seed");
    cmd->add_option("--eps", grad_opts->eps, "central difference step");
    cmd->add_option("--report", grad_opts->report, "report JSON output");
    cmd->callback([grad_opts, &exit_code] {
      if (run_check_grad(*grad_opts) > 0) exit_code = 1;
    });
  }

  // export-vectors ------------------------------------------------------------
  auto export_opts = std::make_shared<ExportVectorsOpts>();
  {
    CLI::App* cmd = add_subcommand("export-vectors", "write contextual encodings");
    cmd->add_option("-m,--model", export_opts->checkpoint, "checkpoint")->required();
    cmd->add_option("-c,--corpus", export_opts->corpus, "corpus JSONL")->required();
    cmd->add_option("-o,--output", export_opts->output, "vector file")->required();
    cmd->add_option("--component", export_opts->component, "extractor | classifier");
    cmd->callback([export_opts] { run_export_vectors(*export_opts); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
