"""Category descriptor tooling: render, validate, and generate offline.

Descriptors are attribute lists that render to sentences like
"An airplane is a large vehicle with long wings and a streamlined body".
The validator enforces the two authoring rules: no color terms (they are
domain-dependent) and no repeated attributes.
"""

from domainbench.prompts import (
    CategoryDescriptor,
    generate_descriptors,
    parse_prompt,
    render_prompt,
    validate,
)

results = generate_descriptors(["airplane", "dog", "hourglass", "unicycle"], workers=1)
print("rendered fixture descriptors:")
for r in results:
    print(" ", render_prompt(r.descriptor, verb="is" if r.category == "airplane" else "has"))

sentence = render_prompt(results[0].descriptor, verb="is")
descriptor, verb = parse_prompt(sentence)
print(f"\nparse -> render round trip stable: {render_prompt(descriptor, verb) == sentence}")

print("\nvalidation:")
adversarial = [
    CategoryDescriptor("flag", ["red stripes", "a tall pole"]),
    CategoryDescriptor("cup", ["a curved handle", "a curved  HANDLE"]),
    CategoryDescriptor("heron", ["a long neck", "thin wading legs"]),
]
for d in adversarial:
    report = validate(d)
    status = "pass" if report.passed else "FAIL"
    notes = "; ".join(f"{v.rule}={v.text}" for v in report.violations)
    print(f"  {d.category:<8} {status}  {notes}")

# generation isolates per-category failures instead of aborting the batch
mixed = generate_descriptors(["airplane", "gryphon"], workers=1)
print("\nbatch with an unknown category:")
for r in mixed:
    print(f"  {r.category:<10} ok={r.ok}  error={r.error}")
