# Models para o MCTP-ANCOVA
