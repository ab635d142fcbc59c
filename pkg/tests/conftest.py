def pytest_terminal_summary(terminalreporter):
    blocks = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", "") != "call":
                continue
            props = dict(rep.user_properties)
            if "acceptance" in props:
                notes = [f"      {v}" for k, v in rep.user_properties if k != "acceptance"]
                blocks.append([props["acceptance"]] + notes)
    if blocks:
        terminalreporter.section("acceptance criteria")
        for block in sorted(blocks):
            for line in block:
                terminalreporter.write_line(line)
