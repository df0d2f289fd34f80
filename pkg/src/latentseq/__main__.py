from latentseq.cli import main

main()
