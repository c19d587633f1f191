from dckit.cli import main

main()
