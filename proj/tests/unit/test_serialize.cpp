#include <gtest/gtest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "odx/error.hpp"
#include "odx/serialize.hpp"
#include "odx/synthgen.hpp"
#include "odx/tokens.hpp"

#include "../support/fixtures.hpp"

#ifndef ODX_SOURCE_DIR
#error "ODX_SOURCE_DIR must point at the repository root"
#endif

using namespace odx;
using fixture::day;
using fixture::PatientBuilder;

namespace {

PredictionInstance small_instance() {
    auto p = PatientBuilder("E1", 52, Sex::M)
                 .visit(day("2022-01-03"), {"F411", "I10"}, {"99213"})
                 .visit(day("2022-02-10"), {"M545"})
                 .visit(day("2022-03-01"), {"N189"}, {"80053"})
                 .fill(day("2022-01-04"), "OXYCODONE HCL", "Analgesics - Opioid", "5 MG", "ORAL")
                 .fill(day("2022-02-27"), "SERTRALINE HCL", "Antidepressants", "50 MG", "ORAL")
                 .build();
    PredictionInstance inst;
    inst.enrol_id = p.enrol_id;
    inst.cutoff_date = day("2022-03-01");
    inst.history = p;
    inst.window = {7};
    return inst;
}

const CodeDictionary& dict() {
    static const CodeDictionary d = CodePools::defaults().dictionary();
    return d;
}

}  // namespace

TEST(Serialize, FormatNamesRoundTrip) {
    for (auto f : kAllFormats) EXPECT_EQ(prompt_format_from_string(to_string(f)), f);
    EXPECT_FALSE(prompt_format_from_string("verbose"));
}

TEST(Serialize, FieldLabels) {
    EXPECT_EQ(dict().field_label("DIAG_CD"), "diagnosis code");
    EXPECT_EQ(dict().field_label("UNKNOWN_FIELD"), "UNKNOWN_FIELD");
}

TEST(Serialize, MissingCodeEchoed) {
    EXPECT_EQ(dict().describe(CodeSystem::Icd10Dx, "Q999"), "Q999");
    EXPECT_EQ(dict().describe(CodeSystem::Icd10Dx, "F411"), "Generalized anxiety disorder");
}

TEST(Serialize, VisitsIncludedWithoutTruncation) {
    const auto doc = render_prompt(small_instance(), PromptFormat::DetailedDescriptive, 30, FieldMask{}, dict());
    EXPECT_EQ(doc.visits_included, 3);
    EXPECT_EQ(render_prompt(small_instance(), PromptFormat::DetailedDescriptive, 2, FieldMask{}, dict()).visits_included, 2);
}

TEST(Serialize, DetailedBodyIsJsonInOrder) {
    const auto doc = render_prompt(small_instance(), PromptFormat::DetailedCode, 30, FieldMask{}, dict());
    const auto j = nlohmann::ordered_json::parse(doc.body);
    const auto& enc = j.at("ENCOUNTERS");
    ASSERT_EQ(enc.size(), 3u);
    EXPECT_EQ(enc[0].at("SVCDATE"), "2022-01-03");
    EXPECT_EQ(enc[0].at("DIAG_CD")[0], "F411");
    EXPECT_EQ(enc[2].at("SVCDATE"), "2022-03-01");
    ASSERT_EQ(j.at("PRESCRIPTIONS").size(), 2u);
    EXPECT_EQ(j.at("PRESCRIPTIONS")[0].at("DRUGNAME"), "OXYCODONE HCL");
}

TEST(Serialize, DetailedDropsFillsBeforeFirstVisit) {
    const auto doc = render_prompt(small_instance(), PromptFormat::DetailedCode, 2, FieldMask{}, dict());
    const auto j = nlohmann::json::parse(doc.body);
    ASSERT_EQ(j.at("PRESCRIPTIONS").size(), 1u);
    EXPECT_EQ(j.at("PRESCRIPTIONS")[0].at("DRUGNAME"), "SERTRALINE HCL");
}

TEST(Serialize, DescriptiveUsesLabelsAndDescriptions) {
    const auto doc = render_prompt(small_instance(), PromptFormat::DetailedDescriptive, 30, FieldMask{}, dict());
    EXPECT_NE(doc.body.find("\"diagnosis code\""), std::string::npos);
    EXPECT_NE(doc.body.find("Generalized anxiety disorder"), std::string::npos);
    EXPECT_EQ(doc.body.find("DIAG_CD"), std::string::npos);
    EXPECT_NE(doc.body.find("\"male\""), std::string::npos);
}

TEST(Serialize, MaskOmitsFields) {
    FieldMask mask;
    mask.prescriptions = false;
    mask.procedures = false;
    const auto doc = render_prompt(small_instance(), PromptFormat::DetailedCode, 30, mask, dict());
    EXPECT_EQ(doc.body.find("PRESCRIPTIONS"), std::string::npos);
    EXPECT_EQ(doc.body.find("PROC_CD"), std::string::npos);
    EXPECT_NE(doc.body.find("DIAG_CD"), std::string::npos);
    EXPECT_THROW(render_prompt(small_instance(), PromptFormat::DetailedCode, 30, FieldMask{false, false, false}, dict()),
                 ValidationError);
}

TEST(Serialize, RejectsBadArguments) {
    EXPECT_THROW(render_prompt(small_instance(), PromptFormat::DetailedCode, 0, FieldMask{}, dict()), ValidationError);
    auto empty = small_instance();
    empty.history.encounters.clear();
    EXPECT_THROW(render_prompt(empty, PromptFormat::DetailedCode, 30, FieldMask{}, dict()), ValidationError);
}

TEST(Serialize, SummarizedCounts) {
    auto p = PatientBuilder("S").visit(day("2022-01-01"), {"N189"}).visit(day("2022-01-05"), {"N189"}).build();
    PredictionInstance inst;
    inst.enrol_id = "S";
    inst.cutoff_date = day("2022-01-05");
    inst.history = p;
    const auto summary = summarize_history(inst, 30, FieldMask{});
    ASSERT_EQ(summary.size(), 1u);
    EXPECT_EQ(summary.begin()->second, 2);
    const auto doc = render_prompt(inst, PromptFormat::SummarizedCode, 30, FieldMask{}, dict());
    const auto j = nlohmann::json::parse(doc.body);
    EXPECT_EQ(j.at("PDX: N189"), 2);
}

TEST(Serialize, InstructionStatesWindowAndSchema) {
    auto inst = small_instance();
    inst.window = {30};
    for (auto f : kAllFormats) {
        const auto doc = render_prompt(inst, f, 30, FieldMask{}, dict());
        EXPECT_NE(doc.instruction.find("drug overdose within the next 30 days"), std::string::npos);
        EXPECT_NE(doc.instruction.find("{\"overdose_risk\": \"yes\"}"), std::string::npos);
        EXPECT_EQ(doc.window_days, 30);
        EXPECT_EQ(doc.token_estimate, estimate_tokens(doc.instruction + doc.body));
    }
}

TEST(Serialize, Deterministic) {
    for (auto f : kAllFormats) {
        const auto a = render_prompt(small_instance(), f, 30, FieldMask{}, dict());
        const auto b = render_prompt(small_instance(), f, 30, FieldMask{}, dict());
        EXPECT_EQ(a.body, b.body);
        EXPECT_EQ(a.instruction, b.instruction);
    }
}

TEST(Serialize, CodeVariantShorter) {
    const auto pop = generate_population(GeneratorConfig{}, Split::Test, 4);
    const auto ts = build_task_set(pop.patients, make_window(7), Split::Test);
    for (std::size_t i = 0; i < ts.instances.size(); i += 45) {
        const auto code = render_prompt(ts.instances[i], PromptFormat::DetailedCode, 30, FieldMask{}, dict());
        const auto desc = render_prompt(ts.instances[i], PromptFormat::DetailedDescriptive, 30, FieldMask{}, dict());
        EXPECT_LT(code.token_estimate, desc.token_estimate);
    }
}

TEST(Serialize, TemplateFilesMatchBuiltins) {
    const auto loaded = PromptTemplates::load(std::string(ODX_SOURCE_DIR) + "/templates/v1");
    const auto builtin = PromptTemplates::defaults();
    for (auto f : kAllFormats) EXPECT_EQ(loaded.raw(f), builtin.raw(f)) << to_string(f);
}

TEST(Serialize, TemplateNeedsWindowPlaceholder) {
    fixture::TempDir dir("tpl");
    for (auto f : kAllFormats) {
        std::ofstream(dir / (std::string(to_string(f)) + ".txt")) << "Answer yes or no.\n";
    }
    EXPECT_THROW(PromptTemplates::load(dir.path), ValidationError);
}

TEST(Serialize, DictionaryRoundTrip) {
    fixture::TempDir dir("dict");
    dict().save(dir / "d.json");
    const auto back = CodeDictionary::load(dir / "d.json");
    EXPECT_EQ(back.code_count(), dict().code_count());
    EXPECT_EQ(back.describe(CodeSystem::Cpt, "99213"), dict().describe(CodeSystem::Cpt, "99213"));
}

TEST(Serialize, PromptsJsonlRoundTrip) {
    fixture::TempDir dir("prompts");
    std::vector<PromptDocument> docs;
    for (auto f : kAllFormats) docs.push_back(render_prompt(small_instance(), f, 30, FieldMask{}, dict()));
    write_prompts(dir / "p.jsonl", docs);
    const auto back = read_prompts(dir / "p.jsonl");
    ASSERT_EQ(back.size(), docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        EXPECT_EQ(back[i].body, docs[i].body);
        EXPECT_EQ(back[i].format, docs[i].format);
        EXPECT_EQ(back[i].token_estimate, docs[i].token_estimate);
    }
}

TEST(Tokens, EmptyIsZero) { EXPECT_EQ(estimate_tokens(""), 0); }

TEST(Tokens, ParagraphNearReferenceCount) {
    const std::string paragraph =
        "Patients who fill opioid prescriptions from several pharmacies within a short period face a higher risk of "
        "overdose. Claims records capture each dispensing event with its fill date, strength and route, while "
        "encounter rows list diagnoses and procedures billed during a visit. Combining both streams gives a timeline "
        "that a model can read, and the most recent months carry the strongest warning signs.";
    ASSERT_EQ(paragraph.size(), 400u);
    // o200k BPE count of the paragraph, computed offline.
    const double reference = 69;
    const double est = static_cast<double>(estimate_tokens(paragraph));
    EXPECT_LE(std::abs(est - reference) / reference, 0.20) << est;
}

TEST(Tokens, Monotone) {
    std::string s;
    long prev = 0;
    for (int i = 0; i < 50; ++i) {
        s += "word" + std::to_string(i) + " ";
        const long t = estimate_tokens(s);
        EXPECT_GE(t, prev);
        prev = t;
    }
}
