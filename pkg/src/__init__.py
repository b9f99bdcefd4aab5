# MCTP-ANCOVA - testes de contrastes múltiplos para ANCOVA heterocedástica
