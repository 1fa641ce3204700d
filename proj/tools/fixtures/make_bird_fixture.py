#!/usr/bin/env python3
"""Generate the miniature BIRD-layout fixture used by the test suites.

Writes <out>/dev.json, <out>/dev_databases/<db>/<db>.sqlite and the
description CSVs, plus <out>/policy.json (known-wrong SQL per question, used
by the scripted fixture recorder). Output is deterministic.

The ``financial`` database is shaped so that the two worked trajectories in
the fixtures resolve to [(10451,)] and [(96,)].
"""

import argparse
import csv
import json
import os
import random
import sqlite3

FINANCIAL_DDL = [
    """CREATE TABLE district (
        district_id INTEGER PRIMARY KEY,
        A2 TEXT NOT NULL,
        A3 TEXT NOT NULL,
        A4 TEXT NOT NULL,
        A11 INTEGER NOT NULL,
        A15 INTEGER,
        A16 INTEGER NOT NULL
    )""",
    """CREATE TABLE account (
        account_id INTEGER PRIMARY KEY,
        district_id INTEGER NOT NULL REFERENCES district(district_id),
        frequency TEXT NOT NULL,
        date DATE NOT NULL
    )""",
    """CREATE TABLE client (
        client_id INTEGER PRIMARY KEY,
        gender TEXT NOT NULL,
        birth_date DATE NOT NULL,
        district_id INTEGER NOT NULL REFERENCES district(district_id)
    )""",
    """CREATE TABLE disp (
        disp_id INTEGER PRIMARY KEY,
        client_id INTEGER NOT NULL REFERENCES client(client_id),
        account_id INTEGER NOT NULL REFERENCES account(account_id),
        type TEXT NOT NULL
    )""",
    """CREATE TABLE card (
        card_id INTEGER PRIMARY KEY,
        disp_id INTEGER NOT NULL REFERENCES disp(disp_id),
        type TEXT NOT NULL,
        issued DATE NOT NULL
    )""",
    """CREATE TABLE loan (
        loan_id INTEGER PRIMARY KEY,
        account_id INTEGER NOT NULL REFERENCES account(account_id),
        date DATE NOT NULL,
        amount INTEGER NOT NULL,
        duration INTEGER NOT NULL,
        payments REAL NOT NULL,
        status TEXT NOT NULL
    )""",
    """CREATE TABLE "order" (
        order_id INTEGER PRIMARY KEY,
        account_id INTEGER NOT NULL REFERENCES account(account_id),
        bank_to TEXT NOT NULL,
        account_to INTEGER NOT NULL,
        amount REAL NOT NULL,
        k_symbol TEXT NOT NULL
    )""",
    """CREATE TABLE trans (
        trans_id INTEGER PRIMARY KEY,
        account_id INTEGER NOT NULL REFERENCES account(account_id),
        date DATE NOT NULL,
        type TEXT NOT NULL,
        operation TEXT,
        amount INTEGER NOT NULL,
        balance INTEGER NOT NULL,
        k_symbol TEXT,
        bank TEXT,
        account INTEGER
    )""",
]

FINANCIAL_DESCRIPTIONS = {
    "account": [
        ("account_id", "account id", "the id of the account", "integer", ""),
        ("district_id", "location of branch", "location of branch", "integer", ""),
        ("frequency", "frequency", "frequency of the acount", "text",
         '"POPLATEK MESICNE" stands for monthly issuance; "POPLATEK TYDNE" stands for weekly issuance; "POPLATEK PO OBRATU" stands for issuance after transaction'),
        ("date", "date", "the creation date of the account", "date", "in the form YYMMDD"),
    ],
    "card": [
        ("card_id", "credit card id", "id number of credit card", "integer", ""),
        ("disp_id", "disposition id", "disposition id", "integer", ""),
        ("type", "", "type of credit card", "text", '"junior": junior class of credit card; "classic": standard class; "gold": high-level credit card'),
        ("issued", "", "the date when the credit card issued", "date", "in the form YYMMDD"),
    ],
    "client": [
        ("client_id", "", "the unique number", "integer", ""),
        ("gender", "", "", "text", "F: female; M: male"),
        ("birth_date", "", "birth date", "date", ""),
        ("district_id", "location of branch", "location of branch", "integer", ""),
    ],
    "disp": [
        ("disp_id", "disposition id", "unique number of identifying this row of record", "integer", ""),
        ("client_id", "", "id number of client", "integer", ""),
        ("account_id", "", "id number of account", "integer", ""),
        ("type", "", "type of disposition", "text", '"OWNER" : "USER" : "DISPONENT"'),
    ],
    "district": [
        ("district_id", "location of branch", "location of branch", "integer", ""),
        ("A2", "district_name", "district_name", "text", ""),
        ("A3", "region", "region", "text", ""),
        ("A4", "number of inhabitants", "", "text", ""),
        ("A11", "average salary", "average salary", "integer", ""),
        ("A15", "no. of committed crimes 1995", "no. of committed crimes 1995", "integer", ""),
        ("A16", "no. of committed crimes 1996", "no. of committed crimes 1996", "integer", ""),
    ],
    "loan": [
        ("loan_id", "", "the id number identifying the loan data", "integer", ""),
        ("account_id", "", "the id number identifying the account", "integer", ""),
        ("date", "", "the date when the loan is approved", "date", ""),
        ("amount", "", "approved amount", "integer", "unit：US dollar"),
        ("duration", "", "loan duration", "integer", "unit：month"),
        ("payments", "monthly payments", "monthly payments", "real", "unit：month"),
        ("status", "", "repayment status", "text", "'A' stands for contract finished, no problems; 'B' stands for contract finished, loan not paid; 'C' stands for running contract, OK so far; 'D' stands for running contract, client in debt"),
    ],
    "order": [
        ("order_id", "", "identifying the unique order", "integer", ""),
        ("account_id", "", "id number of account", "integer", ""),
        ("bank_to", "bank of the recipient", "bank of the recipient", "text", ""),
        ("account_to", "account of the recipient", "account of the recipient", "integer", "each bank has unique two-letter code"),
        ("amount", "debited amount", "debited amount", "real", ""),
        ("k_symbol", "characterization of the payment", "purpose of the payment", "text", '"POJISTNE" stands for insurance payment; "SIPO" stands for household payment; "LEASING" stands for leasing; "UVER" stands for loan payment'),
    ],
    "trans": [
        ("trans_id", "transaction id", "transaction id", "integer", ""),
        ("account_id", "", "", "integer", ""),
        ("date", "date of transaction", "date of transaction", "date", ""),
        ("type", "", "+/- transaction", "text", '"PRIJEM" stands for credit; "VYDAJ" stands for withdrawal'),
        ("operation", "mode of transaction", "mode of transaction", "text", '"VYBER KARTOU": credit card withdrawal; "VKLAD": credit in cash; "PREVOD Z UCTU": collection from another bank; "VYBER": withdrawal in cash; "PREVOD NA UCET": remittance to another bank'),
        ("amount", "amount of money", "amount of money", "integer", "Unit：USD"),
        ("balance", "balance after transaction", "balance after transaction", "integer", "Unit：USD"),
        ("k_symbol", "characterization of the transaction", "", "text", ""),
        ("bank", "bank of the partner", "", "text", ""),
        ("account", "account of the partner", "", "integer", ""),
    ],
}

DISTRICTS = [
    # id, name, region, inhabitants, salary, A15, A16
    (1, "Hl.m. Praha", "Prague", "1204953", 12541, 85677, 99107),
    (2, "Benesov", "central Bohemia", "88884", 8507, 1850, 2159),
    (3, "Beroun", "central Bohemia", "75232", 8980, 2299, 2356),
    (4, "Kladno", "central Bohemia", "149893", 9753, 5179, 4897),
    (5, "Kolin", "central Bohemia", "95616", 9307, 2705, 2640),
    (6, "Brno - mesto", "south Moravia", "387570", 9897, 18721, 18696),
    (7, "Ostrava - mesto", "north Moravia", "323870", 10673, 18782, 18347),
    (8, "Plzen - mesto", "west Bohemia", "170449", 10787, 9878, 10810),
    (9, "Usti nad Labem", "north Bohemia", "118650", 9317, 6949, 6872),
    (10, "Liberec", "north Bohemia", "159617", 9198, 6041, 6261),
    (11, "Pardubice", "east Bohemia", "162580", 9538, 5410, 5796),
    (12, "Olomouc", "north Moravia", "226122", 8994, 5796, 6132),
]

# Male/female client counts per district. District 7 has the second-highest
# A15 and exactly 96 male clients.
CLIENT_COUNTS = {1: (40, 38), 2: (6, 7), 3: (5, 6), 4: (9, 8), 5: (6, 5),
                 6: (30, 29), 7: (96, 88), 8: (12, 14), 9: (8, 9),
                 10: (7, 8), 11: (9, 7), 12: (10, 11)}

FREQUENCIES = ["POPLATEK MESICNE", "POPLATEK TYDNE", "POPLATEK PO OBRATU"]


def build_financial(path, rng):
    if os.path.exists(path):
        os.remove(path)
    con = sqlite3.connect(path)
    for ddl in FINANCIAL_DDL:
        con.execute(ddl)
    con.executemany("INSERT INTO district VALUES (?,?,?,?,?,?,?)", DISTRICTS)

    clients = []
    cid = 1
    for d in sorted(CLIENT_COUNTS):
        males, females = CLIENT_COUNTS[d]
        for g, n in (("M", males), ("F", females)):
            for _ in range(n):
                year = rng.randint(1930, 1980)
                clients.append((cid, g, f"{year}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}", d))
                cid += 1
    rng.shuffle(clients)
    clients.sort(key=lambda c: c[0])
    con.executemany("INSERT INTO client VALUES (?,?,?,?)", clients)

    # One owner account per client, ids spread over the BIRD id range.
    account_ids = sorted(rng.sample(range(1, 11300), len(clients) - 1) + [10451])
    account_ids = sorted(set(account_ids))
    while len(account_ids) < len(clients):
        account_ids.append(account_ids[-1] + 1)
    accounts = []
    for client, aid in zip(clients, account_ids):
        year = rng.choice([1993, 1993, 1994, 1995, 1996, 1997])
        if aid == 10451:
            year = 1993
        accounts.append((aid, client[3], rng.choice(FREQUENCIES),
                         f"{year}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"))
    con.executemany("INSERT INTO account VALUES (?,?,?,?)", accounts)

    disps = []
    for i, (client, acct) in enumerate(zip(clients, accounts), start=1):
        disps.append((i, client[0], acct[0], "OWNER"))
    con.executemany("INSERT INTO disp VALUES (?,?,?,?)", disps)

    cards = []
    for i, disp in enumerate(disps[::4], start=1):
        cards.append((i, disp[0], rng.choice(["junior", "classic", "gold"]),
                      f"{rng.randint(1994, 1998)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"))
    con.executemany("INSERT INTO card VALUES (?,?,?,?)", cards)

    loans = []
    lid = 4959
    by_id = {a[0]: a for a in accounts}
    loan_accounts = sorted(rng.sample([a[0] for a in accounts if a[0] != 10451], 120) + [10451])
    for aid in loan_accounts:
        acct_year = int(by_id[aid][3][:4])
        duration = rng.choice([12, 24, 36, 48, 60])
        amount = rng.randint(5000, 400000)
        if aid == 10451:
            duration, amount = 48, 482940
        elif acct_year == 1993 and duration > 12:
            amount = min(amount, 470000)
        elif duration == 12:
            amount = rng.randint(300000, 590000)
        payments = round(amount / duration, 1)
        loans.append((lid, aid, f"{max(acct_year, 1994)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}",
                      amount, duration, payments, rng.choice("ABCD")))
        lid += 1
    con.executemany("INSERT INTO loan VALUES (?,?,?,?,?,?,?)", loans)

    orders = []
    for i, aid in enumerate(loan_accounts[:60], start=29401):
        orders.append((i, aid, rng.choice(["AB", "CD", "EF", "GH", "IJ", "KL", "MN", "OP", "QR", "ST", "UV", "WX", "YZ"]),
                       rng.randint(10000000, 99999999), float(rng.randint(100, 9000)),
                       rng.choice(["POJISTNE", "SIPO", "LEASING", "UVER"])))
    con.executemany('INSERT INTO "order" VALUES (?,?,?,?,?,?)', orders)

    trans = []
    tid = 1
    for aid in [a[0] for a in accounts[:80]]:
        balance = 0
        for _ in range(3):
            kind = rng.choice(["PRIJEM", "VYDAJ"])
            amount = rng.randint(100, 20000)
            balance += amount if kind == "PRIJEM" else -amount
            trans.append((tid, aid, f"{rng.randint(1995, 1998)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}",
                          kind, rng.choice(["VKLAD", "VYBER", "PREVOD NA UCET", None]), amount, balance,
                          rng.choice(["SIPO", "UROK", None]), None, None))
            tid += 1
    con.executemany("INSERT INTO trans VALUES (?,?,?,?,?,?,?,?,?,?)", trans)
    con.commit()
    con.close()
    return accounts, clients


def financial_questions(accounts):
    qs = []

    def add(question, sql, evidence, wrong, difficulty="simple"):
        qs.append({"db_id": "financial", "question": question, "evidence": evidence,
                   "SQL": sql, "difficulty": difficulty, "_wrong": wrong})

    add("Among the accounts who have loan validity more than 12 months, list out the accounts that have the highest approved amount and have account opening date in 1993.",
        "SELECT T2.account_id FROM loan AS T1 INNER JOIN account AS T2 ON T1.account_id = T2.account_id WHERE STRFTIME('%Y', T2.date) = '1993' AND T1.duration > 12 ORDER BY T1.amount DESC LIMIT 1",
        "Loan validity more than 12 months refers to duration > 12; Highest approved amount refers to MAX(amount); Account opening date in 1993 refers to STRFTIME('%Y', date) = '1993'",
        "SELECT T2.account_id FROM loan AS T1 INNER JOIN account AS T2 ON T1.account_id = T2.account_id WHERE STRFTIME('%Y', T2.date) = '1993' ORDER BY T1.amount DESC LIMIT 1",
        "moderate")
    add("In the branch where the second-highest number of crimes were committed in 1995 occurred, how many male clients are there?",
        "SELECT COUNT(T1.client_id) FROM client AS T1 INNER JOIN district AS T2 ON T1.district_id = T2.district_id WHERE T1.gender = 'M' AND T2.A15 = (SELECT T3.A15 FROM district AS T3 ORDER BY T3.A15 DESC LIMIT 1, 1)",
        "Male refers to gender = 'M'; A15 stands for no. of commited crimes 1995",
        "SELECT COUNT(c.client_id) FROM client c JOIN disp d ON c.client_id = d.client_id JOIN account a ON d.account_id = a.account_id JOIN district dis ON a.district_id = dis.district_id WHERE c.gender = 'male' AND dis.district_id = (SELECT district_id FROM district ORDER BY A15 DESC LIMIT 1 OFFSET 1)",
        "moderate")
    add("Among the accounts who have loan validity more than 24 months, list out the accounts that have the lowest approved amount and have account opening date before 1997.",
        "SELECT T1.account_id FROM loan AS T1 INNER JOIN account AS T2 ON T1.account_id = T2.account_id WHERE T1.duration > 24 AND STRFTIME('%Y', T2.date) < '1997' ORDER BY T1.amount ASC LIMIT 1",
        "Loan validity more than 24 months refers to duration > 24; Lowest approved amount refers to MIN(amount); before 1997 refers to STRFTIME('%Y', date) < '1997'",
        "SELECT T1.account_id FROM loan AS T1 INNER JOIN account AS T2 ON T1.account_id = T2.account_id WHERE T1.duration > 24 ORDER BY T1.amount ASC LIMIT 1",
        "moderate")

    for d in DISTRICTS:
        did, name = d[0], d[1]
        add(f"How many female clients opened their accounts in the branch located in {name}?",
            f"SELECT COUNT(T1.client_id) FROM client AS T1 INNER JOIN district AS T2 ON T1.district_id = T2.district_id WHERE T1.gender = 'F' AND T2.A2 = '{name}'",
            f"Female refers to gender = 'F'; A2 refers to the district name",
            f"SELECT COUNT(T1.client_id) FROM client AS T1 INNER JOIN district AS T2 ON T1.district_id = T2.district_id WHERE T1.gender = 'female' AND T2.A2 = '{name}'")
        add(f"How many accounts with weekly issuance are held at the branch in {name}?",
            f"SELECT COUNT(T1.account_id) FROM account AS T1 INNER JOIN district AS T2 ON T1.district_id = T2.district_id WHERE T1.frequency = 'POPLATEK TYDNE' AND T2.A2 = '{name}'",
            "Weekly issuance refers to frequency = 'POPLATEK TYDNE'; A2 refers to the district name",
            f"SELECT COUNT(T1.account_id) FROM account AS T1 INNER JOIN district AS T2 ON T1.district_id = T2.district_id WHERE T1.frequency = 'WEEKLY' AND T2.A2 = '{name}'")
        add(f"What is the number of committed crimes in 1996 in the district {name}?",
            f"SELECT A16 FROM district WHERE A2 = '{name}'",
            "A16 stands for no. of committed crimes 1996; A2 refers to the district name",
            f"SELECT A15 FROM district WHERE A2 = '{name}'")
    for year in (1993, 1994, 1995, 1996, 1997):
        add(f"How many accounts were opened in {year}?",
            f"SELECT COUNT(account_id) FROM account WHERE STRFTIME('%Y', date) = '{year}'",
            f"opened in {year} refers to STRFTIME('%Y', date) = '{year}'",
            f"SELECT COUNT(account_id) FROM account WHERE date LIKE '{year % 100}%'")
    for duration in (12, 24, 36, 48, 60):
        add(f"What is the total approved amount of loans with a duration of {duration} months?",
            f"SELECT SUM(amount) FROM loan WHERE duration = {duration}",
            f"approved amount refers to amount; duration of {duration} months refers to duration = {duration}",
            f"SELECT SUM(payments) FROM loan WHERE duration = {duration}")
    for status, meaning in (("A", "contract finished with no problems"), ("B", "contract finished with the loan not paid"),
                            ("C", "running contract that is OK so far"), ("D", "running contract with the client in debt")):
        add(f"How many loans have the status of {meaning}?",
            f"SELECT COUNT(loan_id) FROM loan WHERE status = '{status}'",
            f"status = '{status}' means {meaning}",
            f"SELECT COUNT(loan_id) FROM loan WHERE status = '{meaning}'")
    for region in sorted({d[2] for d in DISTRICTS}):
        add(f"List the names of districts in the region {region}.",
            f"SELECT A2 FROM district WHERE A3 = '{region}'",
            "A2 refers to the district name; A3 refers to the region",
            f"SELECT A2, A3 FROM district WHERE A3 = '{region}'")
    for card_type in ("junior", "classic", "gold"):
        add(f"How many {card_type} credit cards were issued to account owners?",
            f"SELECT COUNT(T1.card_id) FROM card AS T1 INNER JOIN disp AS T2 ON T1.disp_id = T2.disp_id WHERE T1.type = '{card_type}' AND T2.type = 'OWNER'",
            f"{card_type} refers to card type; owner refers to disp.type = 'OWNER'",
            f"SELECT COUNT(T1.card_id) FROM card AS T1 INNER JOIN disp AS T2 ON T1.disp_id = T2.disp_id WHERE T1.type = '{card_type.upper()}'")
    for k_symbol, meaning in (("POJISTNE", "insurance payment"), ("SIPO", "household payment"),
                              ("LEASING", "leasing"), ("UVER", "loan payment")):
        add(f"What is the total debited amount of orders for {meaning}?",
            f"SELECT SUM(amount) FROM \"order\" WHERE k_symbol = '{k_symbol}'",
            f"{meaning} refers to k_symbol = '{k_symbol}'",
            f"SELECT SUM(amount) FROM \"order\" WHERE k_symbol = '{meaning}'")
    for d in DISTRICTS[:7]:
        add(f"What is the average salary in the district {d[1]}?",
            f"SELECT A11 FROM district WHERE A2 = '{d[1]}'",
            "A11 refers to average salary; A2 refers to the district name",
            f"SELECT AVG(A11) FROM district")
    return qs


SMALL_DATABASES = [
    "california_schools", "card_games", "codebase_community", "debit_card_specializing",
    "european_football_2", "formula_1", "student_club", "superhero",
    "thrombosis_prediction", "toxicology",
]


def build_small(root, db_id, rng):
    path = os.path.join(root, f"{db_id}.sqlite")
    if os.path.exists(path):
        os.remove(path)
    con = sqlite3.connect(path)
    con.execute("CREATE TABLE item (item_id INTEGER PRIMARY KEY, name TEXT NOT NULL, score REAL)")
    rows = [(i, f"{db_id}_{i}", round(rng.uniform(0, 100), 2)) for i in range(1, 21)]
    con.executemany("INSERT INTO item VALUES (?,?,?)", rows)
    con.commit()
    con.close()
    desc = os.path.join(root, "database_description")
    os.makedirs(desc, exist_ok=True)
    write_csv(os.path.join(desc, "item.csv"), [
        ("item_id", "", "unique id", "integer", ""),
        ("name", "", "item name", "text", ""),
        ("score", "", "score value", "real", "0-100"),
    ])
    return [
        {"db_id": db_id, "question": f"How many items are there in {db_id}?",
         "evidence": "", "SQL": "SELECT COUNT(*) FROM item", "difficulty": "simple",
         "_wrong": "SELECT COUNT(*) FROM item WHERE score > 50"},
        {"db_id": db_id, "question": f"What is the highest item score in {db_id}?",
         "evidence": "highest refers to MAX(score)", "SQL": "SELECT MAX(score) FROM item",
         "difficulty": "simple", "_wrong": "SELECT MIN(score) FROM item"},
    ]


def write_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["original_column_name", "column_name", "column_description", "data_format", "value_description"])
        w.writerows(rows)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    rng = random.Random(7)
    dbroot = os.path.join(args.out, "dev_databases")
    os.makedirs(dbroot, exist_ok=True)

    fin = os.path.join(dbroot, "financial")
    os.makedirs(os.path.join(fin, "database_description"), exist_ok=True)
    accounts, _ = build_financial(os.path.join(fin, "financial.sqlite"), rng)
    for table, rows in FINANCIAL_DESCRIPTIONS.items():
        write_csv(os.path.join(fin, "database_description", f"{table}.csv"), rows)
    questions = financial_questions(accounts)

    for db_id in SMALL_DATABASES:
        d = os.path.join(dbroot, db_id)
        os.makedirs(d, exist_ok=True)
        questions += build_small(d, db_id, rng)

    dev, policy = [], {}
    for qid, q in enumerate(questions):
        wrong = q.pop("_wrong")
        dev.append({"question_id": qid, **q})
        policy[str(qid)] = {"question": q["question"], "wrong_sql": wrong}
    with open(os.path.join(args.out, "dev.json"), "w", encoding="utf-8") as fh:
        json.dump(dev, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    with open(os.path.join(args.out, "policy.json"), "w", encoding="utf-8") as fh:
        json.dump(policy, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


if __name__ == "__main__":
    main()
