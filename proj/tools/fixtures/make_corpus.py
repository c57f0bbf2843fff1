#!/usr/bin/env python3
"""Writes the bundled fixture corpora: data/corpus/{news,cve,apt_report}.jsonl
and data/assessment_pool.jsonl. Output depends only on the seed."""

import argparse
import json
import random
from pathlib import Path

ACTORS = ["APT41", "APT29", "APT28", "Lazarus Group", "Fancy Bear", "a financially motivated crew",
          "an unnamed state-backed group", "a ransomware affiliate"]
NATIONS = ["Chinese", "Russian", "North Korean", "Iranian", "Vietnamese"]
MALWARE = ["Sunburst", "ShadowPad", "PlugX", "TrickBot", "Emotet", "WannaCry", "a custom loader",
           "a previously unseen backdoor"]
TOOLS = ["Cobalt Strike", "Mimikatz", "PowerShell Empire", "PsExec", "Orion Software"]
PATTERNS = ["spear phishing", "credential dumping", "lateral movement", "remote code execution",
            "privilege escalation", "watering hole", "supply chain attack", "malicious code"]
PRODUCTS = ["Win32k", "WordPress", "Junos OS", "Microsoft Exchange", "Apache Struts",
            "the Quiz and Survey Master plugin", "a popular VPN appliance", "a managed file transfer server"]
VULNS = ["SQL injection", "buffer overflow", "a use-after-free flaw", "an authentication bypass",
         "a path traversal bug", "a deserialization issue"]
SECTORS = ["energy", "healthcare", "finance", "telecommunications", "government", "education",
           "manufacturing", "logistics", "defense"]
REGIONS = ["Europe", "Southeast Asia", "North America", "the Middle East", "Latin America"]
VERBS_ACCESS = ["gained access to", "compromised", "broke into", "infiltrated"]
ASSETS = ["an update server", "a domain controller", "the build pipeline", "mail servers",
          "a jump host", "customer databases", "internal wikis", "backup systems"]
OUTCOMES = ["steals credentials", "exfiltrates data", "encrypts files", "deploys a backdoor",
            "disables security tools", "uploads arbitrary files"]
VENDORS = ["Microsoft", "Cisco", "Juniper", "Fortinet", "Citrix", "VMware", "Atlassian", "Oracle"]

NEWS_OPENERS = [
    "Security researchers warned on {day} that {actor} is targeting {sector} organizations in {region}.",
    "A new campaign attributed to {actor} has hit {n} {sector} companies since {month}.",
    "{vendor} published an emergency advisory after attackers abused {product} in the wild.",
    "Investigators say {malware} was planted on {asset} at a large {sector} provider.",
    "Law enforcement agencies seized infrastructure used by {actor} to run {malware}.",
    "A months-long breach at a {sector} software vendor exposed thousands of downstream customers.",
]
NEWS_BODY = [
    "The intruders {access} {asset} and moved quietly for several weeks.",
    "According to the report, the operators relied on {pattern} to reach high-value accounts.",
    "The malware {outcome} and hides its traffic inside ordinary HTTPS requests.",
    "Analysts linked the activity to {actor} based on overlapping infrastructure and tooling.",
    "Victims include at least {n} organizations in the {sector} sector.",
    "The attackers used {tool} to escalate privileges and harvest passwords.",
    "{vendor} released patches and urged administrators to rotate credentials immediately.",
    "Incident responders recommend reviewing logs for unusual logins from {region}.",
    "{named} has previously been tied to attacks on {sector} firms in {region}.",
    "Officials declined to say how much data was taken during the intrusion.",
    "Researchers observed {malware} contacting a command server registered only days earlier.",
    "The campaign began with {pattern} emails that impersonated {sector} regulators.",
]
CVE_OPENERS = [
    "An issue was discovered in {product} before {version}.",
    "{vuln_cap} in {product} {version} allows remote attackers to execute arbitrary code.",
    "A vulnerability in the web interface of {product} could allow an unauthenticated attacker to gain access.",
    "{product} through {version} mishandles session tokens, which allows {pattern}.",
]
CVE_BODY = [
    "It made it possible for unauthenticated attackers to upload arbitrary files and achieve remote code execution.",
    "Successful exploitation could lead to {pattern} on the affected host.",
    "The flaw is caused by improper validation of user-supplied input.",
    "An attacker could exploit this vulnerability by sending a crafted request to the affected endpoint.",
    "The issue was fixed in version {version2}.",
    "Exploitation requires no user interaction and low attack complexity.",
    "This vulnerability affects deployments that expose the management interface to the Internet.",
    "The vendor assigned the issue a base score of {score}.",
]
APT_OPENERS = [
    "{named} is a state-sponsored espionage group linked to {nation} intelligence services.",
    "This report describes recent intrusions by {actor} against {sector} targets in {region}.",
    "{named} has been active since at least {year} and focuses on intellectual property theft.",
    "Our team tracked a cluster of activity we associate with {actor} during {month}.",
]
APT_BODY = [
    "The group uses {pattern} to obtain an initial foothold.",
    "After initial access the operators deploy {malware} and {tool} for persistence.",
    "We observed {pattern} followed by {pattern2} across several subnets.",
    "The actors exploited {vuln} in {product} to gain access.",
    "Stolen data was staged in password-protected archives before exfiltration.",
    "The implant {outcome} and beacons every few minutes.",
    "Infrastructure overlaps suggest a connection to earlier {named} operations.",
    "Targets included {sector} and {sector2} organizations in {region}.",
    "The operators cleared event logs to hinder forensic analysis.",
    "Defenders should monitor for the execution of {tool} on servers.",
]
MONTHS = ["January", "February", "March", "April", "May", "June", "July", "August", "September",
          "October", "November", "December"]
DAYS = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday"]


def fill(rng, template):
    def version():
        return f"{rng.randint(1, 9)}.{rng.randint(0, 9)}.{rng.randint(0, 20)}"
    vuln = rng.choice(VULNS)
    values = {
        "actor": rng.choice(ACTORS), "named": rng.choice(ACTORS[:5]), "nation": rng.choice(NATIONS), "malware": rng.choice(MALWARE),
        "tool": rng.choice(TOOLS), "pattern": rng.choice(PATTERNS), "pattern2": rng.choice(PATTERNS),
        "product": rng.choice(PRODUCTS), "vuln": vuln, "vuln_cap": vuln[0].upper() + vuln[1:],
        "sector": rng.choice(SECTORS), "sector2": rng.choice(SECTORS), "region": rng.choice(REGIONS),
        "access": rng.choice(VERBS_ACCESS), "asset": rng.choice(ASSETS), "outcome": rng.choice(OUTCOMES),
        "vendor": rng.choice(VENDORS), "n": rng.randint(3, 60), "month": rng.choice(MONTHS),
        "day": rng.choice(DAYS), "year": rng.randint(2008, 2019), "version": version(),
        "version2": version(), "score": f"{rng.randint(5, 9)}.{rng.randint(0, 9)}",
    }
    return template.format(**values)


def body(rng, openers, sentences, lo, hi):
    parts = [fill(rng, rng.choice(openers))]
    for _ in range(rng.randint(lo, hi)):
        parts.append(fill(rng, rng.choice(sentences)))
    return " ".join(parts)


def date(rng):
    return f"{rng.randint(2017, 2021)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"


def doc(rng, doc_id, category, text, provenance):
    title = text.split(". ")[0][:80]
    return {"id": doc_id, "source_category": category, "title": title, "body": text,
            "published": date(rng), "provenance": provenance, "authenticity": "true_cti"}


PAPER_EXAMPLES = [
    ("news", "APT41 is a state-sponsored espionage group which operates against higher education, "
             "travel services, and news/media firms which provide some indication that the group "
             "also tracks individuals and conducts surveillance."),
    ("news", "Malicious Domain in SolarWinds Hack Turned into 'Killswitch'. A key malicious domain "
             "name used to control potentially thousands of computer systems compromised via the "
             "months-long breach at network monitoring software vendor SolarWinds was commandeered by "
             "security experts and used as a \"killswitch\" designed to turn the sprawling cybercrime "
             "operation against itself."),
    ("cve", "An issue was discovered in the Quiz and Survey Master plugin before 7.0.1 for WordPress. "
            "It made it possible for unauthenticated attackers to upload arbitrary files and achieve "
            "remote code execution."),
]


def corpus(rng):
    out = {"news": [], "cve": [], "apt_report": []}
    for i, (cat, text) in enumerate(PAPER_EXAMPLES):
        out[cat].append(doc(rng, f"{cat}-{len(out[cat]) + 1:03d}", cat, text, "https://example.org/seed"))
    counts = {"news": 80, "cve": 60, "apt_report": 60}
    for cat, n in counts.items():
        while len(out[cat]) < n:
            idx = len(out[cat]) + 1
            if cat == "news":
                text = body(rng, NEWS_OPENERS, NEWS_BODY, 3, 7)
                prov = "https://krebsonsecurity.com/" + f"{idx:03d}"
            elif cat == "cve":
                text = f"CVE-{rng.randint(2017, 2021)}-{rng.randint(1000, 29999)}. " + \
                    body(rng, CVE_OPENERS, CVE_BODY, 2, 4)
                prov = "https://nvd.nist.gov/vuln/" + f"{idx:03d}"
            else:
                text = body(rng, APT_OPENERS, APT_BODY, 4, 9)
                prov = "https://attack.mitre.org/report/" + f"{idx:03d}"
            out[cat].append(doc(rng, f"{cat}-{idx:03d}", cat, text, prov))
    return out


def pool(rng, n=112, unusable=4):
    cats = ["news", "cve", "apt_report"]
    docs = []
    for i in range(n):
        cat = cats[i % 3]
        if i < unusable:
            # No sentence terminator: dropped by the truncation filter.
            text = ", ".join(fill(rng, rng.choice(NEWS_BODY)).rstrip(".") for _ in range(3))
        elif cat == "news":
            text = body(rng, NEWS_OPENERS, NEWS_BODY, 3, 8)
        elif cat == "cve":
            text = body(rng, CVE_OPENERS, CVE_BODY, 2, 5)
        else:
            text = body(rng, APT_OPENERS, APT_BODY, 4, 10)
        if i % 37 == 5:
            # Long report that exceeds the 500-word sample limit.
            text += " " + " ".join(fill(rng, rng.choice(APT_BODY)) for _ in range(70))
        d = doc(rng, f"pool-{i + 1:03d}", cat, text, "https://example.org/pool")
        docs.append(d)
    return docs


def write_jsonl(path, docs, meta):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"_meta": meta}) + "\n")
        for d in docs:
            f.write(json.dumps(d, ensure_ascii=False) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[2] / "data")
    ap.add_argument("--seed", type=int, default=20210301)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    meta = {"generator": "tools/fixtures/make_corpus.py", "seed": args.seed}
    for cat, docs in corpus(rng).items():
        write_jsonl(args.out / "corpus" / f"{cat}.jsonl", docs, meta)
    write_jsonl(args.out / "assessment_pool.jsonl", pool(random.Random(args.seed + 1)), meta)


if __name__ == "__main__":
    main()
