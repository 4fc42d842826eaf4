"""One-off generator for the checked-in fixture corpus under fixtures/."""

import csv
import json
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIX = ROOT / "fixtures"
(FIX / "guidelines").mkdir(parents=True, exist_ok=True)

sys.path.insert(0, str(ROOT / "src"))

from medconsult.guidelines import parse_guideline, serialize_guideline  # noqa: E402


def write_tree(name: str, doc: dict) -> None:
    text = json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    tree = parse_guideline(text)  # validate before writing
    canonical = serialize_guideline(tree)
    (FIX / "guidelines" / f"{name}.json").write_text(canonical, encoding="utf-8")


TREES = {
    # Transcribed from a published acute-bronchitis pathway: the pneumonia-risk
    # step checks respiratory rate and blood oxygen saturation.
    "acute_bronchitis": {
        "disease": "acute bronchitis",
        "version": "1",
        "source": "authored fixture: adult outpatient bronchitis pathway",
        "metrics": {
            "cough_duration_days": "days",
            "respiratory_rate": "breaths/min",
            "spo2_percent": "%",
        },
        "root": "q_cough",
        "nodes": {
            "q_cough": {"kind": "question", "key": "cough",
                        "prompt": "Do you have a cough?",
                        "answers": {"yes": "c_duration", "no": "not_bronchitis"}},
            "c_duration": {"kind": "condition", "metric": "cough_duration_days",
                           "op": "<", "threshold": 21, "units": "days",
                           "true": "q_phlegm", "false": "chronic_referral"},
            "q_phlegm": {"kind": "question", "key": "phlegm",
                         "prompt": "Are you coughing up phlegm?",
                         "answers": {"yes": "c_resp_rate", "no": "c_resp_rate"}},
            "c_resp_rate": {"kind": "condition", "metric": "respiratory_rate",
                            "op": ">", "threshold": 24, "units": "breaths/min",
                            "true": "c_spo2", "false": "conclude_bronchitis"},
            "c_spo2": {"kind": "condition", "metric": "spo2_percent",
                       "op": "<", "threshold": 94, "units": "%",
                       "true": "xray", "false": "conclude_bronchitis"},
            "xray": {"kind": "inlab", "test": "chest_xray", "child": "pneumonia_risk"},
            "pneumonia_risk": {"kind": "conclusion",
                               "diagnosis": "suspected pneumonia", "weight": 1.0},
            "conclude_bronchitis": {"kind": "conclusion",
                                    "diagnosis": "acute bronchitis", "weight": 1.0},
            "not_bronchitis": {"kind": "conclusion",
                               "diagnosis": "unlikely acute bronchitis", "weight": 0.5},
            "chronic_referral": {"kind": "conclusion",
                                 "diagnosis": "chronic cough referral", "weight": 0.5},
        },
    },
    "gastritis": {
        "disease": "gastritis",
        "version": "1",
        "source": "authored fixture: dyspepsia differential",
        "metrics": {"heart_rate_bpm": "bpm"},
        "root": "q_burning",
        "nodes": {
            "q_burning": {"kind": "question", "key": "burning_stomach",
                          "prompt": "Do you feel a burning pain in your stomach, especially after meals?",
                          "answers": {"yes": "q_appetite", "no": "not_gastritis"}},
            "q_appetite": {"kind": "question", "key": "increased_appetite",
                           "prompt": "Has your appetite increased while you keep losing weight?",
                           "answers": {"yes": "c_hr", "no": "conclude_gastritis"}},
            "c_hr": {"kind": "condition", "metric": "heart_rate_bpm",
                     "op": "<=", "threshold": 120, "units": "bpm",
                     "true": "conclude_gastritis", "false": "thyroid_referral"},
            "conclude_gastritis": {"kind": "conclusion", "diagnosis": "gastritis",
                                   "weight": 1.0},
            "thyroid_referral": {"kind": "conclusion",
                                 "diagnosis": "possible hyperthyroidism", "weight": 0.5},
            "not_gastritis": {"kind": "conclusion", "diagnosis": "unlikely gastritis",
                              "weight": 0.5},
        },
    },
    "hyperthyroidism": {
        "disease": "hyperthyroidism",
        "version": "1",
        "source": "authored fixture: thyroid screen",
        "metrics": {"heart_rate_bpm": "bpm"},
        "root": "q_appetite",
        "nodes": {
            "q_appetite": {"kind": "question", "key": "increased_appetite",
                           "prompt": "Has your appetite increased recently?",
                           "answers": {"yes": "q_weight", "no": "not_hyper"}},
            "q_weight": {"kind": "question", "key": "weight_loss",
                         "prompt": "Have you been losing weight despite eating more?",
                         "answers": {"yes": "c_hr", "no": "not_hyper"}},
            "c_hr": {"kind": "condition", "metric": "heart_rate_bpm",
                     "op": ">", "threshold": 120, "units": "bpm",
                     "true": "labs", "false": "not_hyper"},
            "labs": {"kind": "inlab", "test": "tsh_level", "child": "conclude_hyper"},
            "conclude_hyper": {"kind": "conclusion", "diagnosis": "hyperthyroidism",
                               "weight": 1.0},
            "not_hyper": {"kind": "conclusion", "diagnosis": "unlikely hyperthyroidism",
                          "weight": 0.5},
        },
    },
    "pneumonia": {
        "disease": "pneumonia",
        "version": "1",
        "source": "authored fixture: community pneumonia screen",
        "metrics": {"spo2_percent": "%", "body_temp_c": "C"},
        "root": "q_fever",
        "nodes": {
            "q_fever": {"kind": "question", "key": "fever",
                        "prompt": "Do you have a fever?",
                        "answers": {"yes": "c_temp", "no": "not_pneumonia"}},
            "c_temp": {"kind": "condition", "metric": "body_temp_c",
                       "op": ">=", "threshold": 38.0, "units": "C",
                       "true": "c_spo2", "false": "c_spo2"},
            "c_spo2": {"kind": "condition", "metric": "spo2_percent",
                       "op": "<", "threshold": 94, "units": "%",
                       "true": "xray", "false": "not_pneumonia"},
            "xray": {"kind": "inlab", "test": "chest_xray", "child": "conclude"},
            "conclude": {"kind": "conclusion", "diagnosis": "pneumonia", "weight": 1.0},
            "not_pneumonia": {"kind": "conclusion", "diagnosis": "unlikely pneumonia",
                              "weight": 0.5},
        },
    },
    "influenza": {
        "disease": "influenza",
        "version": "1",
        "source": "authored fixture: seasonal flu screen",
        "metrics": {"body_temp_c": "C"},
        "root": "q_onset",
        "nodes": {
            "q_onset": {"kind": "question", "key": "sudden_onset",
                        "prompt": "Did your symptoms start suddenly, within a day?",
                        "answers": {"yes": "q_aches", "no": "not_flu"}},
            "q_aches": {"kind": "question", "key": "body_aches",
                        "prompt": "Do you have body aches or muscle pain?",
                        "answers": {"yes": "c_temp", "no": "not_flu"}},
            "c_temp": {"kind": "condition", "metric": "body_temp_c",
                       "op": ">=", "threshold": 38.0, "units": "C",
                       "true": "conclude_flu", "false": "mild_flu"},
            "conclude_flu": {"kind": "conclusion", "diagnosis": "influenza",
                             "weight": 1.0},
            "mild_flu": {"kind": "conclusion", "diagnosis": "influenza", "weight": 0.7},
            "not_flu": {"kind": "conclusion", "diagnosis": "unlikely influenza",
                        "weight": 0.5},
        },
    },
    "dermatitis": {
        "disease": "dermatitis",
        "version": "1",
        "source": "authored fixture: eczema screen",
        "metrics": {},
        "root": "q_rash",
        "nodes": {
            "q_rash": {"kind": "question", "key": "rash",
                       "prompt": "Do you have a red, scaly rash?",
                       "answers": {"yes": "q_itch", "no": "not_derm"}},
            "q_itch": {"kind": "question", "key": "itching",
                       "prompt": "Does the rash itch, especially at night?",
                       "answers": {"yes": "conclude", "no": "q_contact"}},
            "q_contact": {"kind": "question", "key": "new_products",
                          "prompt": "Any new soaps, detergents, or skin products lately?",
                          "answers": {"yes": "conclude", "no": "not_derm"}},
            "conclude": {"kind": "conclusion", "diagnosis": "dermatitis", "weight": 1.0},
            "not_derm": {"kind": "conclusion", "diagnosis": "unlikely dermatitis",
                         "weight": 0.5},
        },
    },
    "gerd": {
        "disease": "gerd",
        "version": "1",
        "source": "authored fixture: reflux screen",
        "metrics": {},
        "root": "q_heartburn",
        "nodes": {
            "q_heartburn": {"kind": "question", "key": "heartburn",
                            "prompt": "Do you get heartburn or acid regurgitation?",
                            "answers": {"yes": "q_lying", "no": "not_gerd"}},
            "q_lying": {"kind": "question", "key": "worse_lying_down",
                        "prompt": "Is it worse when lying down or after large meals?",
                        "answers": {"yes": "conclude", "no": "q_freq"}},
            "q_freq": {"kind": "question", "key": "weekly_episodes",
                       "prompt": "Does it happen two or more times a week?",
                       "answers": {"yes": "conclude", "no": "not_gerd"}},
            "conclude": {"kind": "conclusion", "diagnosis": "gerd", "weight": 1.0},
            "not_gerd": {"kind": "conclusion", "diagnosis": "unlikely gerd",
                         "weight": 0.5},
        },
    },
    "migraine": {
        "disease": "migraine",
        "version": "1",
        "source": "authored fixture: headache screen",
        "metrics": {},
        "root": "q_headache",
        "nodes": {
            "q_headache": {"kind": "question", "key": "headache",
                           "prompt": "Do you get throbbing headaches, often on one side?",
                           "answers": {"yes": "q_light", "no": "not_migraine"}},
            "q_light": {"kind": "question", "key": "light_sensitivity",
                        "prompt": "Does light or noise make the headache worse?",
                        "answers": {"yes": "conclude", "no": "q_nausea"}},
            "q_nausea": {"kind": "question", "key": "nausea",
                         "prompt": "Do you feel nauseated during the headache?",
                         "answers": {"yes": "conclude", "no": "not_migraine"}},
            "conclude": {"kind": "conclusion", "diagnosis": "migraine", "weight": 1.0},
            "not_migraine": {"kind": "conclusion", "diagnosis": "unlikely migraine",
                             "weight": 0.5},
        },
    },
    "anemia": {
        "disease": "anemia",
        "version": "1",
        "source": "authored fixture: anemia screen",
        "metrics": {"hemoglobin_g_dl": "g/dL"},
        "root": "q_fatigue",
        "nodes": {
            "q_fatigue": {"kind": "question", "key": "fatigue",
                          "prompt": "Have you felt unusually tired or weak?",
                          "answers": {"yes": "q_pale", "no": "not_anemia"}},
            "q_pale": {"kind": "question", "key": "pale_skin",
                       "prompt": "Have you noticed pale skin or brittle nails?",
                       "answers": {"yes": "labs", "no": "labs"}},
            "labs": {"kind": "inlab", "test": "hemoglobin_g_dl", "child": "c_hgb"},
            "c_hgb": {"kind": "condition", "metric": "hemoglobin_g_dl",
                      "op": "<", "threshold": 12.0, "units": "g/dL",
                      "true": "conclude", "false": "not_anemia",
                      "provenance": ["in-lab"]},
            "conclude": {"kind": "conclusion", "diagnosis": "anemia", "weight": 1.0},
            "not_anemia": {"kind": "conclusion", "diagnosis": "unlikely anemia",
                           "weight": 0.5},
        },
    },
    "insomnia": {
        "disease": "insomnia",
        "version": "1",
        "source": "authored fixture: sleep disorder screen",
        "metrics": {"sleep_score": "score"},
        "root": "q_sleep",
        "nodes": {
            "q_sleep": {"kind": "question", "key": "trouble_sleeping",
                        "prompt": "Do you have trouble falling or staying asleep?",
                        "answers": {"yes": "c_score", "no": "not_insomnia"}},
            "c_score": {"kind": "condition", "metric": "sleep_score",
                        "op": "<", "threshold": 50, "units": "score",
                        "true": "conclude", "false": "q_daytime"},
            "q_daytime": {"kind": "question", "key": "daytime_fatigue",
                          "prompt": "Are you exhausted or irritable during the day?",
                          "answers": {"yes": "conclude", "no": "not_insomnia"}},
            "conclude": {"kind": "conclusion", "diagnosis": "insomnia", "weight": 1.0},
            "not_insomnia": {"kind": "conclusion", "diagnosis": "unlikely insomnia",
                             "weight": 0.5},
        },
    },
    "asthma": {
        "disease": "asthma",
        "version": "1",
        "source": "authored fixture: asthma screen",
        "metrics": {"respiratory_rate": "breaths/min"},
        "root": "q_wheeze",
        "nodes": {
            "q_wheeze": {"kind": "question", "key": "wheezing",
                         "prompt": "Do you wheeze or whistle when breathing out?",
                         "answers": {"yes": "q_night", "no": "not_asthma"}},
            "q_night": {"kind": "question", "key": "night_cough",
                        "prompt": "Does coughing wake you at night?",
                        "answers": {"yes": "c_rr", "no": "c_rr"}},
            "c_rr": {"kind": "condition", "metric": "respiratory_rate",
                     "op": ">", "threshold": 20, "units": "breaths/min",
                     "true": "conclude", "false": "spirometry"},
            "spirometry": {"kind": "inlab", "test": "spirometry"},
            "conclude": {"kind": "conclusion", "diagnosis": "asthma", "weight": 1.0},
            "not_asthma": {"kind": "conclusion", "diagnosis": "unlikely asthma",
                           "weight": 0.5},
        },
    },
    "common_cold": {
        "disease": "common cold",
        "version": "1",
        "source": "authored fixture: URI screen",
        "metrics": {"body_temp_c": "C"},
        "root": "q_nose",
        "nodes": {
            "q_nose": {"kind": "question", "key": "runny_nose",
                       "prompt": "Do you have a runny or stuffy nose?",
                       "answers": {"yes": "q_throat", "no": "not_cold"}},
            "q_throat": {"kind": "question", "key": "sore_throat",
                         "prompt": "Is your throat sore or scratchy?",
                         "answers": {"yes": "c_temp", "no": "c_temp"}},
            "c_temp": {"kind": "condition", "metric": "body_temp_c",
                       "op": "<", "threshold": 38.0, "units": "C",
                       "true": "conclude", "false": "not_cold"},
            "conclude": {"kind": "conclusion", "diagnosis": "common cold",
                         "weight": 1.0},
            "not_cold": {"kind": "conclusion", "diagnosis": "unlikely common cold",
                         "weight": 0.5},
        },
    },
}

for name, doc in TREES.items():
    write_tree(name, doc)

# A negative fixture for CLI/parser tests: child id never declared.
(FIX / "guidelines_bad").mkdir(exist_ok=True)
(FIX / "guidelines_bad" / "dangling.json").write_text(json.dumps({
    "disease": "broken",
    "version": "1",
    "root": "q1",
    "metrics": {},
    "nodes": {
        "q1": {"kind": "question", "key": "anything",
               "prompt": "?", "answers": {"yes": "ghost", "no": "end"}},
        "end": {"kind": "conclusion", "diagnosis": "broken", "weight": 1.0},
    },
}, indent=2) + "\n", encoding="utf-8")


# --- symptom-disease table (50 colloquial entries) --------------------------

SYMPTOM_TABLE = [
    ("my stomach burns after meals", ["gastritis"]),
    ("burning pain in my upper belly after eating", ["gastritis"]),
    ("stomach ache and feeling hungry all the time", ["gastritis", "hyperthyroidism"]),
    ("always hungry, eating more but losing weight", ["hyperthyroidism", "gastritis"]),
    ("gnawing stomach pain when I skip meals", ["gastritis"]),
    ("losing weight even though I eat a lot", ["hyperthyroidism"]),
    ("my heart races and I feel shaky and sweaty", ["hyperthyroidism"]),
    ("feeling hot all the time and losing weight", ["hyperthyroidism"]),
    ("coughing for a week with yellow phlegm", ["acute bronchitis"]),
    ("bad cough with mucus and chest feels heavy", ["acute bronchitis"]),
    ("wet cough and wheezing after a cold", ["acute bronchitis", "asthma"]),
    ("cough won't go away and I feel run down", ["acute bronchitis"]),
    ("hacking cough with phlegm every morning", ["acute bronchitis"]),
    ("high fever with chills and trouble breathing", ["pneumonia"]),
    ("fever and sharp chest pain when I breathe in", ["pneumonia"]),
    ("short of breath with fever and wet cough", ["pneumonia", "acute bronchitis"]),
    ("sudden fever with body aches all over", ["influenza"]),
    ("fever, chills, and aching muscles since yesterday", ["influenza"]),
    ("hit by fever and headache overnight, so tired", ["influenza"]),
    ("feverish, achy, and completely wiped out", ["influenza"]),
    ("itchy red rash on my arms", ["dermatitis"]),
    ("dry scaly patches on my skin that itch at night", ["dermatitis"]),
    ("skin breakout after using a new soap", ["dermatitis"]),
    ("red itchy skin in the crooks of my elbows", ["dermatitis"]),
    ("heartburn every night when I lie down", ["gerd"]),
    ("acid taste in my mouth after big meals", ["gerd"]),
    ("burning behind my breastbone after dinner", ["gerd", "gastritis"]),
    ("food comes back up when I bend over", ["gerd"]),
    ("pounding headache on one side with nausea", ["migraine"]),
    ("bad headaches where light hurts my eyes", ["migraine"]),
    ("throbbing headache that makes me sick to my stomach", ["migraine"]),
    ("headache with flashing zigzag lines before it starts", ["migraine"]),
    ("tired all the time and look pale", ["anemia"]),
    ("exhausted, dizzy when standing, nails keep breaking", ["anemia"]),
    ("weak and out of breath climbing one flight of stairs", ["anemia"]),
    ("feeling drained and cold hands all day", ["anemia"]),
    ("can't fall asleep and wake up at 3am", ["insomnia"]),
    ("lying awake for hours before sleeping", ["insomnia"]),
    ("sleep is terrible and I'm a zombie at work", ["insomnia"]),
    ("tossing and turning all night long", ["insomnia"]),
    ("wheezing and tight chest when I exercise", ["asthma"]),
    ("whistling sound when I breathe out", ["asthma"]),
    ("coughing fits at night and short of breath", ["asthma"]),
    ("chest tightness around dust or pollen", ["asthma"]),
    ("runny nose and sneezing with a scratchy throat", ["common cold"]),
    ("stuffy nose, sore throat, mild cough", ["common cold"]),
    ("sniffles and a tickle in my throat", ["common cold"]),
    ("blocked nose and watery eyes for two days", ["common cold"]),
    ("sore throat and congestion but no fever", ["common cold"]),
    ("stomach pain with bloating and burping", ["gastritis"]),
]

with open(FIX / "symptom_table.jsonl", "w", encoding="utf-8") as fh:
    for symptom, diseases in SYMPTOM_TABLE:
        fh.write(json.dumps({"symptom": symptom, "diseases": diseases}) + "\n")

# Paraphrased patient phrasings for retrieval evaluation: same meaning,
# different wording, labeled with the ground-truth disease.
PARAPHRASES = [
    ("there is a burning feeling in my belly after I eat", "gastritis"),
    ("my gut burns right after meals", "gastritis"),
    ("stomach keeps hurting and I somehow feel hungry nonstop", "gastritis"),
    ("gnawing belly pain whenever I skip lunch", "gastritis"),
    ("bloating, burping, and an aching stomach", "gastritis"),
    ("I eat a lot more than before yet the scale keeps dropping", "hyperthyroidism"),
    ("heart keeps racing and my hands are shaky and sweaty", "hyperthyroidism"),
    ("constantly hot and sweaty while dropping weight", "hyperthyroidism"),
    ("hungry all the time but still losing weight", "hyperthyroidism"),
    ("been coughing up yellow phlegm for about a week", "acute bronchitis"),
    ("nasty cough with mucus and my chest feels heavy", "acute bronchitis"),
    ("wet cough and some wheezing after getting over a cold", "acute bronchitis"),
    ("this cough just won't quit and I'm run down", "acute bronchitis"),
    ("morning cough that brings up phlegm", "acute bronchitis"),
    ("burning up with chills and it's hard to breathe", "pneumonia"),
    ("fever plus a sharp pain in my chest when breathing in", "pneumonia"),
    ("wet cough, fever, and I get short of breath fast", "pneumonia"),
    ("came down overnight with fever and aches everywhere", "influenza"),
    ("chills, fever, and sore muscles since yesterday", "influenza"),
    ("feverish and achy, totally wiped out", "influenza"),
    ("whole body aching with a sudden fever", "influenza"),
    ("red rash on my arms that itches like crazy", "dermatitis"),
    ("itchy dry patches of skin, worse at night", "dermatitis"),
    ("my skin broke out after switching soap", "dermatitis"),
    ("elbow creases are red and itchy", "dermatitis"),
    ("heartburn hits every night once I lie down", "gerd"),
    ("sour acid taste after a big dinner", "gerd"),
    ("burning behind the breastbone after eating", "gerd"),
    ("food backs up into my throat when bending over", "gerd"),
    ("one-sided pounding headache with nausea", "migraine"),
    ("headaches so bad that light hurts my eyes", "migraine"),
    ("throbbing head pain that makes me feel sick", "migraine"),
    ("zigzag flashing lines then a crushing headache", "migraine"),
    ("worn out all day and people say I look pale", "anemia"),
    ("dizzy when I stand up and my nails keep breaking", "anemia"),
    ("out of breath after one flight of stairs, so weak", "anemia"),
    ("drained all day with cold hands", "anemia"),
    ("can't fall asleep, then wide awake at 3am", "insomnia"),
    ("I lie awake for hours before dozing off", "insomnia"),
    ("terrible sleep, feel like a zombie at work", "insomnia"),
    ("tossing and turning the whole night", "insomnia"),
    ("tight chest and wheezing when I work out", "asthma"),
    ("a whistling noise when breathing out", "asthma"),
    ("nighttime coughing fits leave me short of breath", "asthma"),
    ("chest gets tight around dust or pollen", "asthma"),
    ("sneezing with a runny nose and scratchy throat", "common cold"),
    ("nose is stuffed, throat sore, slight cough", "common cold"),
    ("got the sniffles and a tickly throat", "common cold"),
    ("nose blocked and eyes watering for two days", "common cold"),
    ("congested with a sore throat but no fever", "common cold"),
]

with open(FIX / "paraphrases.jsonl", "w", encoding="utf-8") as fh:
    for text, disease in PARAPHRASES:
        fh.write(json.dumps({"text": text, "disease": disease}) + "\n")


# --- dialogue demonstrations -------------------------------------------------

DEMOS = [
    ("gastritis", [
        ("patient", "My stomach burns after I eat."),
        ("doctor", "How long after meals does the burning start?"),
        ("patient", "Within half an hour."),
        ("doctor", "Any change in appetite or weight?"),
        ("patient", "No, both steady."),
        ("doctor", "This pattern fits gastritis; an antacid trial is reasonable."),
    ]),
    ("hyperthyroidism", [
        ("patient", "I'm always hungry but keep losing weight."),
        ("doctor", "Do you feel your heart racing or your hands trembling?"),
        ("patient", "Yes, my heart pounds a lot."),
        ("doctor", "We should check your thyroid hormone levels."),
    ]),
    ("acute bronchitis", [
        ("patient", "I've had a cough with phlegm for five days."),
        ("doctor", "Any fever or trouble breathing?"),
        ("patient", "No fever, just the cough."),
        ("doctor", "Sounds like acute bronchitis; rest and fluids, watch your breathing."),
    ]),
    ("pneumonia", [
        ("patient", "High fever and it hurts to breathe deeply."),
        ("doctor", "What is your oxygen saturation on your smartwatch?"),
        ("patient", "It shows 91 percent."),
        ("doctor", "That is low; please get a chest x-ray today."),
    ]),
    ("influenza", [
        ("patient", "Sudden fever and my whole body aches."),
        ("doctor", "Did it come on within a day?"),
        ("patient", "Yes, overnight."),
        ("doctor", "Classic influenza picture; stay hydrated and rest."),
    ]),
    ("dermatitis", [
        ("patient", "Itchy red patches on my arms."),
        ("doctor", "Any new soaps or detergents recently?"),
        ("patient", "I switched laundry detergent last week."),
        ("doctor", "Likely contact dermatitis; stop the new product."),
    ]),
    ("gerd", [
        ("patient", "Heartburn every night when I lie down."),
        ("doctor", "Does it improve if you avoid late meals?"),
        ("patient", "A little."),
        ("doctor", "This fits reflux; elevate the bed head and avoid late eating."),
    ]),
    ("migraine", [
        ("patient", "Throbbing headache on one side, light makes it worse."),
        ("doctor", "Do you get nausea with it?"),
        ("patient", "Yes, often."),
        ("doctor", "These are migraine features; let's discuss triggers."),
    ]),
    ("anemia", [
        ("patient", "I'm exhausted and look pale."),
        ("doctor", "Let's order a blood count to check your hemoglobin."),
        ("patient", "Okay."),
        ("doctor", "If hemoglobin is low we will look for the cause."),
    ]),
    ("insomnia", [
        ("patient", "I can't fall asleep and wake at 3am."),
        ("doctor", "What does your watch report for sleep score lately?"),
        ("patient", "Around 40."),
        ("doctor", "That is poor sleep; let's review your sleep habits."),
    ]),
]

with open(FIX / "demonstrations.jsonl", "w", encoding="utf-8") as fh:
    for disease, turns in DEMOS:
        text = "\n".join(f"{role}: {line}" for role, line in turns)
        fh.write(json.dumps({"source_id": f"demo/{disease}", "kind": "dialogue",
                             "text": text}) + "\n")


# --- medical textbook snippets ------------------------------------------------

TEXTBOOK = [
    ("gastritis", "Gastritis is inflammation of the stomach lining. Typical "
     "complaints are burning epigastric pain after meals, bloating, and "
     "belching. Heart rate is usually normal; resting rates between 60 and "
     "120 bpm do not suggest a hypermetabolic cause."),
    ("hyperthyroidism", "Hyperthyroidism accelerates metabolism: increased "
     "appetite with weight loss, heat intolerance, tremor, and a resting "
     "heart rate persistently above 120 bpm. Thyroid function tests confirm "
     "the diagnosis."),
    ("acute bronchitis", "Acute bronchitis is a self-limited chest infection "
     "with cough and phlegm lasting under three weeks. Assess pneumonia risk "
     "from respiratory rate above 24 breaths per minute and blood oxygen "
     "saturation below 94 percent."),
    ("pneumonia", "Pneumonia presents with fever, productive cough, and "
     "breathlessness. Oxygen saturation under 94 percent warrants imaging; "
     "a chest x-ray confirms consolidation."),
    ("influenza", "Influenza begins abruptly with fever, chills, myalgia, and "
     "fatigue during seasonal outbreaks. Supportive care suffices for most."),
    ("dermatitis", "Dermatitis causes itchy, red, scaly patches. Contact "
     "dermatitis follows exposure to new soaps, detergents, or cosmetics."),
    ("gerd", "Gastroesophageal reflux disease causes heartburn and "
     "regurgitation, worse after large meals and when lying down. Upper "
     "endoscopy is not required in the presence of typical symptoms."),
    ("migraine", "Migraine is a unilateral throbbing headache with "
     "photophobia, phonophobia, or nausea, lasting hours to days."),
    ("anemia", "Anemia manifests as fatigue, pallor, and exertional "
     "breathlessness. Hemoglobin below 12 g/dL in adults supports the "
     "diagnosis; the cause must then be sought."),
    ("insomnia", "Insomnia is difficulty initiating or maintaining sleep "
     "with daytime impairment. Wearable sleep scores under 50 corroborate "
     "poor sleep quality."),
    ("asthma", "Asthma features episodic wheeze, chest tightness, and night "
     "cough, often triggered by dust, pollen, or exercise. Spirometry "
     "demonstrates reversible obstruction."),
    ("common cold", "The common cold causes rhinorrhea, sneezing, sore "
     "throat, and mild cough without high fever; it resolves within a week "
     "or so."),
]

with open(FIX / "textbook.jsonl", "w", encoding="utf-8") as fh:
    for disease, text in TEXTBOOK:
        fh.write(json.dumps({"source_id": f"textbook/{disease}",
                             "kind": "textbook", "text": text}) + "\n")


# --- free-text symptom phrase -> finding key aliases ---------------------------

ALIASES = {
    "burning_stomach": ["stomach burns", "burning stomach", "burning pain in my stomach",
                        "belly burns", "burning in my belly", "gut burns"],
    "increased_appetite": ["always hungry", "eating more", "hungrier",
                           "appetite increased", "increased appetite", "hungry all the time"],
    "weight_loss": ["losing weight", "weight loss", "lost weight", "keeps dropping"],
    "cough": ["cough", "coughing"],
    "phlegm": ["phlegm", "mucus"],
    "fever": ["fever", "feverish", "burning up"],
    "sudden_onset": ["sudden", "overnight", "within a day"],
    "body_aches": ["body aches", "aching muscles", "muscles ache", "achy"],
    "rash": ["rash", "red patches"],
    "itching": ["itch", "itchy", "itches"],
    "new_products": ["new soap", "new detergent", "switched soap"],
    "heartburn": ["heartburn", "acid taste", "acid regurgitation"],
    "worse_lying_down": ["lying down", "lie down", "when i lie"],
    "headache": ["headache", "head pain"],
    "light_sensitivity": ["light hurts", "light makes", "light sensitivity"],
    "nausea": ["nausea", "nauseated", "sick to my stomach"],
    "fatigue": ["tired", "exhausted", "worn out", "fatigue", "drained"],
    "pale_skin": ["pale", "brittle nails"],
    "trouble_sleeping": ["can't fall asleep", "trouble sleeping", "lying awake",
                         "tossing and turning", "wake up at 3am"],
    "daytime_fatigue": ["zombie at work", "exhausted during the day"],
    "wheezing": ["wheeze", "wheezing", "whistling"],
    "night_cough": ["coughing at night", "cough wakes", "nighttime coughing"],
    "runny_nose": ["runny nose", "stuffy nose", "sniffles", "blocked nose"],
    "sore_throat": ["sore throat", "scratchy throat", "throat sore"],
}

(FIX / "symptom_aliases.json").write_text(json.dumps(ALIASES, indent=2) + "\n",
                                          encoding="utf-8")


# --- incidence table ------------------------------------------------------------

INCIDENCE = [
    {"disease": "gastritis", "age_band": "18-39", "sex": None, "region": None, "rate": 0.12},
    {"disease": "gastritis", "age_band": "40-64", "sex": None, "region": None, "rate": 0.20},
    {"disease": "gastritis", "age_band": "65+", "sex": None, "region": None, "rate": 0.25},
    {"disease": "hyperthyroidism", "age_band": "18-39", "sex": "f", "region": None, "rate": 0.08},
    {"disease": "hyperthyroidism", "age_band": "18-39", "sex": "m", "region": None, "rate": 0.02},
    {"disease": "hyperthyroidism", "age_band": "40-64", "sex": None, "region": None, "rate": 0.05},
    {"disease": "acute bronchitis", "age_band": None, "sex": None, "region": None, "rate": 0.15},
    {"disease": "pneumonia", "age_band": "65+", "sex": None, "region": None, "rate": 0.18},
    {"disease": "pneumonia", "age_band": None, "sex": None, "region": None, "rate": 0.06},
    {"disease": "influenza", "age_band": None, "sex": None, "region": None, "rate": 0.22},
    {"disease": "dermatitis", "age_band": None, "sex": None, "region": None, "rate": 0.10},
    {"disease": "gerd", "age_band": "40-64", "sex": None, "region": None, "rate": 0.18},
    {"disease": "gerd", "age_band": None, "sex": None, "region": None, "rate": 0.11},
    {"disease": "migraine", "age_band": "18-39", "sex": "f", "region": None, "rate": 0.17},
    {"disease": "migraine", "age_band": None, "sex": None, "region": None, "rate": 0.09},
    {"disease": "anemia", "age_band": None, "sex": "f", "region": None, "rate": 0.13},
    {"disease": "anemia", "age_band": None, "sex": None, "region": None, "rate": 0.07},
    {"disease": "insomnia", "age_band": None, "sex": None, "region": None, "rate": 0.19},
    {"disease": "asthma", "age_band": None, "sex": None, "region": None, "rate": 0.09},
    {"disease": "common cold", "age_band": None, "sex": None, "region": None, "rate": 0.30},
]

(FIX / "incidence.json").write_text(json.dumps(INCIDENCE, indent=2) + "\n",
                                    encoding="utf-8")


# --- 20-turn doctor-query dialogue for retrieval-efficiency runs ---------------
# 8 turns genuinely need sensor data; phrasings differ from the training
# templates but stay in-distribution.

FILTER_DIALOGUE = [
    ("What is your resting heart rate this morning?", True),
    ("How long have you had this cough?", False),
    ("Could you share your sleep score from your watch for last night?", True),
    ("Where does your stomach hurt the most?", False),
    ("Please check your oxygen saturation reading right now.", True),
    ("When did the headache first start?", False),
    ("How many steps did your device record yesterday?", True),
    ("Have you taken any medicine for the fever?", False),
    ("What does your smartwatch show for stress score this week?", True),
    ("Does the pain get worse after meals?", False),
    ("Has your pulse been higher than usual over the past few days?", True),
    ("Is anyone at home sick with similar symptoms?", False),
    ("Can you tell me your average heart rate during sleep?", True),
    ("Have you traveled anywhere recently?", False),
    ("What SpO2 values has your watch logged today?", True),
    ("Do you have any drug allergies?", False),
    ("Can you describe the rash on your arm?", False),
    ("Did the sore throat come on suddenly?", False),
    ("Are you able to eat and drink normally?", False),
    ("What were you doing when the dizziness began?", False),
]

with open(FIX / "filter_dialogue.jsonl", "w", encoding="utf-8") as fh:
    for query, relevant in FILTER_DIALOGUE:
        fh.write(json.dumps({"query": query, "sensor_relevant": relevant}) + "\n")


# --- sensor traces ------------------------------------------------------------
# Ten days of hourly heart-rate data ending 2024-03-10. The "normal" trace sits
# in the 60-120 bpm range; the "deviant" trace injects a 3-sigma artifact run
# on the final day.

def hr_rows(deviant: bool):
    start = datetime(2024, 3, 1, 0, 0, tzinfo=timezone.utc)
    rows = []
    values = [66, 70, 74, 68, 72, 76, 70, 64, 72, 78, 74, 70,
              68, 72, 76, 72, 66, 70, 74, 72, 68, 76, 70, 72]
    for day in range(10):
        for hour in range(24):
            ts = start + timedelta(days=day, hours=hour)
            value = values[(day * 7 + hour) % len(values)]
            if deviant and day == 9 and hour in (10, 11, 12):
                value = 140  # artifact run, far outside the baseline spread
            rows.append(("p1", "heart_rate_bpm", ts.isoformat(), value))
    return rows


for name, deviant in (("sensors_normal.csv", False), ("sensors_deviant.csv", True)):
    with open(FIX / name, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "metric", "timestamp", "value"])
        writer.writerows(hr_rows(deviant))

print("fixtures written to", FIX)
