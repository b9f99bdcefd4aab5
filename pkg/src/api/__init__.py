# API para o MCTP-ANCOVA
