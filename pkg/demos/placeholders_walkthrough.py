"""Walk one sentence through recognition, substitution and restoration.

Numbers and other entities are swapped for typed placeholder tokens before
translation and put back afterwards.  Korean groups large numbers by 10^4,
so "1.4 billion" has to become "14억" rather than "1.4억"; the regroup rule
handles that at restoration time.

    python3 demos/placeholders_walkthrough.py
"""

from desknmt.placeholders import DigitRegroupRule, recognize, restore, substitute


def show(sentence, target):
    tokens = sentence.split()
    spans = recognize(tokens)
    substituted, record = substitute(tokens, spans)
    print(f"source       : {sentence}")
    for span in spans:
        print(f"  entity     : {span.type.value:16s} {span.value!r}")
    print(f"substituted  : {' '.join(substituted)}")
    print(f"record line  : {record.to_line()}")
    print(f"model output : {' '.join(target)}")
    naive = restore(target, record, rules=[DigitRegroupRule(regroup=False)])
    regrouped = restore(target, record, rules=[DigitRegroupRule()])
    print(f"naive        : {' '.join(naive.tokens)}")
    print(f"regrouped    : {' '.join(regrouped.tokens)}")
    if regrouped.flagged:
        print(f"flagged      : positions {regrouped.flagged}")
    print()


def main():
    # target sides stand in for what a trained model would emit
    show("1.4 billion", ["__ent_numeric", "억"])
    show("sales reached 25 billion won", ["매출", "__ent_numeric", "억", "원"])
    show("see you on 2024-05-01 at 10:30", ["__ent_date", "__ent_hour", "에", "만나요"])
    # a placeholder with no source counterpart is replaced by <unk> and flagged
    show("hello", ["__ent_numeric", "안녕"])


if __name__ == "__main__":
    main()
